#include "slg/config.hpp"

#include <fstream>
#include <set>

namespace slg {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Baseline: return "baseline";
    case Mode::Sa: return "+sa";
    case Mode::SaLgm: return "+sa+lgm";
    case Mode::Adapter: return "adapter";
    case Mode::Full: return "full";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "baseline") return Mode::Baseline;
  if (s == "+sa" || s == "sa") return Mode::Sa;
  if (s == "+sa+lgm" || s == "sa+lgm") return Mode::SaLgm;
  if (s == "adapter") return Mode::Adapter;
  if (s == "full") return Mode::Full;
  throw ConfigError("unknown mode: " + s + " (expected adapter|full|baseline|+sa|+sa+lgm)");
}

void RunConfig::finalize() {
  if (paper_ratio) backbone.patch_size = 16;
  backbone.validate();
  if (train_samples < 1 || val_samples < 1) throw ConfigError("sample counts must be >= 1");
  if (optim.epochs < 1 || optim.batch_size < 1) throw ConfigError("epochs/batch_size must be >= 1");
}

SynthConfig RunConfig::synth() const {
  SynthConfig s;
  s.image_size = backbone.image_size;
  s.grid = backbone.grid();
  s.mix = mix;
  s.policy = policy;
  return s;
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "image_size", "patch_size", "depth",        "width",          "heads",
      "base_lr",    "weight_decay", "layer_decay", "epochs",        "batch_size",
      "seed",       "mode",       "caption_policy", "offset_units", "k_points",
      "train_samples", "val_samples", "stem_channels", "pyramid_channels",
      "text_tokens", "text_dim",  "backbone_seed", "paper_ratio",   "condition_mix",
  };
  return keys;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known_keys().count(it.key()) == 0) throw ConfigError("config: unknown key '" + it.key() + "'");
  }
  RunConfig c;
  auto get_int = [&](const char* k, int& dst) {
    if (j.contains(k)) dst = j.at(k).get<int>();
  };
  auto get_dbl = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = j.at(k).get<double>();
  };
  get_int("image_size", c.backbone.image_size);
  get_int("patch_size", c.backbone.patch_size);
  get_int("depth", c.backbone.depth);
  get_int("width", c.backbone.width);
  get_int("heads", c.backbone.heads);
  get_dbl("base_lr", c.optim.base_lr);
  get_dbl("weight_decay", c.optim.weight_decay);
  get_dbl("layer_decay", c.optim.layer_decay);
  get_int("epochs", c.optim.epochs);
  get_int("batch_size", c.optim.batch_size);
  if (j.contains("seed")) c.optim.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("caption_policy")) c.policy = parse_policy(j.at("caption_policy").get<std::string>());
  if (j.contains("offset_units")) {
    const std::string u = j.at("offset_units").get<std::string>();
    if (u == "pixel") {
      c.offset_units = OffsetUnits::Pixel;
    } else if (u == "normalized") {
      c.offset_units = OffsetUnits::Normalized;
    } else {
      throw ConfigError("config: offset_units must be pixel|normalized");
    }
  }
  get_int("k_points", c.k_points);
  get_int("train_samples", c.train_samples);
  get_int("val_samples", c.val_samples);
  get_int("stem_channels", c.stem_channels);
  get_int("pyramid_channels", c.pyramid_channels);
  get_int("text_tokens", c.text_tokens);
  get_int("text_dim", c.text_dim);
  if (j.contains("backbone_seed")) c.backbone_seed = j.at("backbone_seed").get<std::uint64_t>();
  if (j.contains("paper_ratio")) c.paper_ratio = j.at("paper_ratio").get<bool>();
  if (j.contains("condition_mix")) {
    const auto& m = j.at("condition_mix");
    for (auto it = m.begin(); it != m.end(); ++it) {
      if (it.key() == "day") {
        c.mix.day = it.value().get<double>();
      } else if (it.key() == "night") {
        c.mix.night = it.value().get<double>();
      } else if (it.key() == "overexposed") {
        c.mix.overexposed = it.value().get<double>();
      } else if (it.key() == "thermal_crossover") {
        c.mix.thermal_crossover = it.value().get<double>();
      } else {
        throw ConfigError("config: unknown condition_mix key '" + it.key() + "'");
      }
    }
  }
  c.finalize();
  return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["image_size"] = backbone.image_size;
  j["patch_size"] = backbone.patch_size;
  j["depth"] = backbone.depth;
  j["width"] = backbone.width;
  j["heads"] = backbone.heads;
  j["base_lr"] = optim.base_lr;
  j["weight_decay"] = optim.weight_decay;
  j["layer_decay"] = optim.layer_decay;
  j["epochs"] = optim.epochs;
  j["batch_size"] = optim.batch_size;
  j["seed"] = optim.seed;
  j["mode"] = mode_name(mode);
  j["caption_policy"] = policy_name(policy);
  j["offset_units"] = offset_units == OffsetUnits::Pixel ? "pixel" : "normalized";
  j["k_points"] = k_points;
  j["train_samples"] = train_samples;
  j["val_samples"] = val_samples;
  j["stem_channels"] = stem_channels;
  j["pyramid_channels"] = pyramid_channels;
  j["text_tokens"] = text_tokens;
  j["text_dim"] = text_dim;
  j["backbone_seed"] = backbone_seed;
  j["paper_ratio"] = paper_ratio;
  j["condition_mix"] = {{"day", mix.day},
                        {"night", mix.night},
                        {"overexposed", mix.overexposed},
                        {"thermal_crossover", mix.thermal_crossover}};
  return j;
}

RunConfig RunConfig::gradcheck_config() {
  RunConfig c;
  c.backbone.image_size = 32;
  c.backbone.patch_size = 8;
  c.backbone.depth = 2;
  c.backbone.width = 32;
  c.backbone.heads = 4;
  c.stem_channels = 8;
  c.pyramid_channels = 16;
  c.text_tokens = 12;
  c.text_dim = 16;
  c.optim.batch_size = 2;
  c.train_samples = 2;
  c.val_samples = 2;
  c.finalize();
  return c;
}

RunConfig RunConfig::ablation_config() {
  RunConfig c;
  c.backbone.image_size = 48;
  c.backbone.patch_size = 6;
  c.backbone.depth = 3;
  c.backbone.width = 32;
  c.backbone.heads = 4;
  c.stem_channels = 8;
  c.pyramid_channels = 16;
  c.text_dim = 32;
  c.optim.epochs = 28;
  c.optim.batch_size = 8;
  c.optim.base_lr = 3e-3;
  c.train_samples = 96;
  c.val_samples = 72;
  c.finalize();
  return c;
}

}  // namespace slg
