#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slg/checkpoint.hpp"
#include "slg/gradcheck.hpp"
#include "slg/model.hpp"
#include "slg/pgm.hpp"
#include "slg/train.hpp"

namespace fs = std::filesystem;

namespace {

void emit(const nlohmann::json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream os(out_path);
  if (!os) throw slg::IoError("cannot write " + out_path);
  os << j.dump(2) << "\n";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
  }
  if (seeds.empty()) throw slg::ConfigError("--seeds: expected a comma-separated list");
  return seeds;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed, const std::string& out_path) {
  slg::GradReport rep = slg::gradcheck(module, seed);
  emit(slg::grad_report_json(rep), out_path);
  return rep.pass() ? 0 : 1;
}

int cmd_train(const std::string& mode, const std::string& config_path, std::int64_t seed,
              const std::string& out_path, const std::string& ckpt_path,
              const std::string& captions_path, const std::string& embeddings_path, bool quiet) {
  slg::RunConfig cfg =
      config_path.empty() ? slg::RunConfig{} : slg::RunConfig::load_file(config_path);
  if (!mode.empty()) cfg.mode = slg::parse_mode(mode);
  if (seed >= 0) cfg.optim.seed = static_cast<std::uint64_t>(seed);
  cfg.finalize();

  slg::Dataset data = slg::make_dataset(cfg, cfg.optim.seed);
  if (!captions_path.empty()) {
    auto captions = slg::load_caption_jsonl(captions_path);
    const std::size_t need = data.train.size() + data.val.size();
    if (captions.size() < need) {
      throw slg::IoError("caption file has " + std::to_string(captions.size()) +
                         " entries, need " + std::to_string(need));
    }
    for (std::size_t i = 0; i < data.train.size(); ++i) data.train[i].caption = captions[i];
    for (std::size_t i = 0; i < data.val.size(); ++i) {
      data.val[i].caption = captions[data.train.size() + i];
    }
  }

  slg::SlgModel model = slg::SlgModel::build(cfg, cfg.optim.seed);
  if (!embeddings_path.empty()) {
    model.set_embedder(
        std::make_shared<slg::FileTextEmbedder>(slg::FileTextEmbedder::load(embeddings_path)));
  }
  slg::TrainingReport rep = slg::train_model(model, data, quiet ? nullptr : &std::cerr);
  emit(slg::training_report_json(rep), out_path);
  if (!ckpt_path.empty()) {
    slg::save_checkpoint(ckpt_path, model.params(), cfg.to_json().dump());
  }
  return 0;
}

int cmd_ablate(const std::string& seeds_str, const std::string& config_path,
               const std::string& out_path, bool quiet) {
  slg::RunConfig cfg = config_path.empty() ? slg::RunConfig::ablation_config()
                                           : slg::RunConfig::load_file(config_path);
  auto seeds = parse_seed_list(seeds_str);
  nlohmann::json j = slg::run_ablation(cfg, seeds, quiet ? nullptr : &std::cerr);
  emit(j, out_path);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, std::int64_t seed, int samples,
             const std::string& out_path) {
  slg::Checkpoint ck = slg::load_checkpoint(ckpt_path);
  slg::RunConfig cfg = slg::RunConfig::from_json(nlohmann::json::parse(ck.config_json));
  if (seed >= 0) cfg.optim.seed = static_cast<std::uint64_t>(seed);
  if (samples > 0) cfg.val_samples = samples;
  slg::SlgModel model = slg::SlgModel::build(cfg, cfg.optim.seed);
  model.load_state(ck.state());
  slg::Dataset data = slg::make_dataset(cfg, cfg.optim.seed);
  slg::Metrics m = slg::evaluate_model(model, data.val, cfg.optim.batch_size);
  nlohmann::json j;
  j["token_ap"] = m.token_ap;
  j["loss"] = m.loss;
  j["params_total"] = model.params().count_total();
  j["params_trainable"] = model.params().count_label(slg::ParamLabel::Adapter);
  j["condition_breakdown"] = m.condition_breakdown;
  emit(j, out_path);
  return 0;
}

int cmd_demo_structure(const std::string& in_dir, const std::string& out_dir, std::int64_t synth,
                       int image_size) {
  fs::create_directories(out_dir);
  slg::Tensor visible, thermal;
  if (synth >= 0) {
    fs::create_directories(in_dir);
    slg::SynthConfig sc;
    sc.image_size = image_size;
    sc.grid = 8;
    auto samples = slg::synthesize(sc, 1, static_cast<std::uint64_t>(synth));
    visible = samples[0].visible;
    thermal = samples[0].thermal;
    const int S = sc.image_size;
    slg::write_ppm01((fs::path(in_dir) / "visible.ppm").string(), visible.data(), S, S);
    slg::write_pgm01((fs::path(in_dir) / "thermal.pgm").string(), thermal.data(), S, S);
  } else {
    const fs::path vis_ppm = fs::path(in_dir) / "visible.ppm";
    const fs::path vis_pgm = fs::path(in_dir) / "visible.pgm";
    slg::Tensor vis_raw = fs::exists(vis_ppm) ? slg::read_pnm(vis_ppm.string())
                                              : slg::read_pnm(vis_pgm.string());
    visible = vis_raw.dim(0) == 3 ? vis_raw : slg::concat({vis_raw, vis_raw, vis_raw}, 0);
    thermal = slg::read_pnm((fs::path(in_dir) / "thermal.pgm").string());
    if (thermal.dim(0) != 1) throw slg::IoError("thermal.pgm must be single-channel");
  }

  const int H = visible.dim(1), W = visible.dim(2);
  slg::StructureEncoderConfig ec;
  slg::StructureEncoder enc = slg::StructureEncoder::init(ec, 20240);
  slg::NoGradGuard ng;
  slg::EncoderTrace tr = enc.forward(slg::reshape(visible, {1, 3, H, W}),
                                     slg::reshape(thermal, {1, 1, H, W}));
  for (int l = 0; l < 3; ++l) {
    const std::size_t ul = static_cast<std::size_t>(l);
    const int h = tr.grad_v[ul].dim(2), w = tr.grad_v[ul].dim(3);
    const std::string sfx = "_l" + std::to_string(l + 1) + ".pgm";
    slg::write_pgm((fs::path(out_dir) / ("grad_visible" + sfx)).string(), tr.grad_v[ul].data(), h, w);
    slg::write_pgm((fs::path(out_dir) / ("grad_thermal" + sfx)).string(), tr.grad_t[ul].data(), h, w);
    slg::write_pgm((fs::path(out_dir) / ("grad_ref" + sfx)).string(), tr.grad_ref[ul].data(), h, w);
    slg::write_pgm((fs::path(out_dir) / ("gate_visible" + sfx)).string(), tr.gate_v[ul].data(), h, w);
    slg::write_pgm((fs::path(out_dir) / ("gate_thermal" + sfx)).string(), tr.gate_t[ul].data(), h, w);
  }
  std::cout << "wrote structural maps for 3 levels to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slg: structure-aware adapter + language-guided modulation, desk scale"};
  app.require_subcommand(1);

  // gradcheck
  std::string gc_module = "all";
  std::uint64_t gc_seed = 0;
  std::string gc_out;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_option("--module", gc_module,
                 "all|tensor_autodiff|frozen_backbone|structure_encoder|ff_adapter|lgm|harness");
  gc->add_option("--seed", gc_seed, "probe seed");
  gc->add_option("--out", gc_out, "write the JSON report here instead of stdout");

  // train
  std::string tr_mode, tr_config, tr_out, tr_ckpt, tr_captions, tr_embeddings;
  std::int64_t tr_seed = -1;
  bool tr_quiet = false;
  auto* tr = app.add_subcommand("train", "train one model and emit a report");
  tr->add_option("--mode", tr_mode, "adapter|full|baseline|+sa|+sa+lgm")->required();
  tr->add_option("--config", tr_config, "JSON config file");
  tr->add_option("--seed", tr_seed, "overrides the config seed");
  tr->add_option("--out", tr_out, "report path (stdout if omitted)");
  tr->add_option("--save-ckpt", tr_ckpt, "write a checkpoint after training");
  tr->add_option("--captions", tr_captions, "JSONL caption file overriding synthetic captions");
  tr->add_option("--caption-embeddings", tr_embeddings,
                 "JSON file of precomputed slot embeddings (file-backed embedder)");
  tr->add_flag("--quiet", tr_quiet, "suppress per-epoch progress");

  // ablate
  std::string ab_seeds = "1,2,3", ab_config, ab_out;
  bool ab_quiet = false;
  auto* ab = app.add_subcommand("ablate", "run the component/prompt/tuning comparison grid");
  ab->add_option("--seeds", ab_seeds, "comma-separated seed list (>= 3)");
  ab->add_option("--config", ab_config, "JSON config file (default: ablation config)");
  ab->add_option("--out", ab_out, "report path (stdout if omitted)");
  ab->add_flag("--quiet", ab_quiet, "suppress progress");

  // eval
  std::string ev_ckpt, ev_out;
  std::int64_t ev_seed = -1;
  int ev_samples = 0;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a synthetic validation set");
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--seed", ev_seed, "validation dataset seed (default: training seed)");
  ev->add_option("--samples", ev_samples, "validation sample count override");
  ev->add_option("--out", ev_out, "report path (stdout if omitted)");

  // demo-structure
  std::string dm_in, dm_out;
  std::int64_t dm_synth = -1;
  int dm_size = 64;
  auto* dm = app.add_subcommand("demo-structure",
                                "write gradient/weight maps of the structure encoder as PGMs");
  dm->add_option("--in", dm_in, "directory with visible.ppm|visible.pgm and thermal.pgm")
      ->required();
  dm->add_option("--out", dm_out, "output directory")->required();
  dm->add_option("--synth", dm_synth, "generate a synthetic pair with this seed into --in first");
  dm->add_option("--image-size", dm_size, "synthetic pair image size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gc->parsed()) return cmd_gradcheck(gc_module, gc_seed, gc_out);
    if (tr->parsed()) {
      return cmd_train(tr_mode, tr_config, tr_seed, tr_out, tr_ckpt, tr_captions, tr_embeddings,
                       tr_quiet);
    }
    if (ab->parsed()) return cmd_ablate(ab_seeds, ab_config, ab_out, ab_quiet);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_seed, ev_samples, ev_out);
    if (dm->parsed()) return cmd_demo_structure(dm_in, dm_out, dm_synth, dm_size);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
