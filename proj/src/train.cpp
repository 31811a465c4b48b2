#include "slg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "slg/rng.hpp"

namespace slg {

namespace {

std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng* shuffle_rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_rng) shuffle_rng->shuffle(order);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); 0 for fewer than two points.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

Dataset make_dataset(const RunConfig& cfg, std::uint64_t seed) {
  Dataset d;
  Rng rng(seed);
  d.train = synthesize(cfg.synth(), cfg.train_samples, rng.fork(0x7e41).next_u64());
  d.val = synthesize(cfg.synth(), cfg.val_samples, rng.fork(0xe7a1).next_u64());
  // dataset-wide unique ids, keys of the caption-embedding file
  for (auto& s : d.val) s.id += cfg.train_samples;
  return d;
}

Metrics evaluate_model(const SlgModel& model, const std::vector<SyntheticSample>& samples,
                       int batch_size,
                       const std::vector<StructuredCaption>* caption_override) {
  if (samples.empty()) throw ShapeError("evaluate: empty dataset");
  NoGradGuard no_grad;
  Metrics m;
  std::vector<real> scores;
  std::vector<std::uint8_t> labels;
  std::vector<SceneCondition> conditions;
  double loss_sum = 0;
  long long loss_count = 0;

  const auto batches = make_batches(static_cast<int>(samples.size()), batch_size, nullptr);
  for (const auto& idxs : batches) {
    Batch b = make_batch(samples, idxs, caption_override);
    Tensor logits = model.forward(b);
    Tensor loss = model.loss(logits, b.target);
    loss_sum += loss.item() * static_cast<double>(logits.size());
    loss_count += logits.size();
    const int T = logits.dim(1);
    for (std::size_t r = 0; r < idxs.size(); ++r) {
      const SyntheticSample& s = samples[static_cast<std::size_t>(idxs[r])];
      for (int t = 0; t < T; ++t) {
        const real z = logits.data()[r * static_cast<std::size_t>(T) + static_cast<std::size_t>(t)];
        scores.push_back(real(1) / (real(1) + std::exp(-z)));
        labels.push_back(s.heatmap[static_cast<std::size_t>(t)] > real(0.5) ? 1 : 0);
        conditions.push_back(s.condition);
      }
    }
  }
  m.loss = loss_sum / static_cast<double>(loss_count);
  m.token_ap = token_average_precision(scores, labels);
  for (SceneCondition c : {SceneCondition::Day, SceneCondition::Night, SceneCondition::Overexposed,
                           SceneCondition::ThermalCrossover}) {
    std::vector<real> cs;
    std::vector<std::uint8_t> cl;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (conditions[i] == c) {
        cs.push_back(scores[i]);
        cl.push_back(labels[i]);
      }
    }
    if (!cs.empty()) m.condition_breakdown[condition_name(c)] = token_average_precision(cs, cl);
  }
  return m;
}

TrainingReport train_model(SlgModel& model, const Dataset& data, std::ostream* log) {
  const RunConfig& cfg = model.config();
  TrainingReport report;
  report.mode = mode_name(cfg.mode);
  report.policy = policy_name(cfg.policy);
  report.seed = cfg.optim.seed;
  report.params_total = model.params().count_total();
  report.params_trainable = model.params().count_label(ParamLabel::Adapter);

  AdamW opt(model.params(), cfg.optim);
  Rng shuffle_rng = Rng(cfg.optim.seed).fork(0xba7c4);

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    double loss_sum = 0;
    long long count = 0;
    for (const auto& idxs : make_batches(static_cast<int>(data.train.size()), cfg.optim.batch_size,
                                         &shuffle_rng)) {
      Tape::active().clear();
      Batch b = make_batch(data.train, idxs);
      Tensor logits = model.forward(b);
      Tensor loss = model.loss(logits, b.target);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item() * static_cast<double>(idxs.size());
      count += static_cast<long long>(idxs.size());
    }
    Tape::active().clear();
    EpochStats es;
    es.train_loss = loss_sum / static_cast<double>(count);
    Metrics vm = evaluate_model(model, data.val, cfg.optim.batch_size);
    es.val_loss = vm.loss;
    es.val_ap = vm.token_ap;
    report.epochs.push_back(es);
    if (log) {
      (*log) << "epoch " << (epoch + 1) << "/" << cfg.optim.epochs << " train_loss "
             << es.train_loss << " val_loss " << es.val_loss << " val_ap " << es.val_ap << "\n";
    }
  }
  report.final_metrics = evaluate_model(model, data.val, cfg.optim.batch_size);
  return report;
}

nlohmann::json training_report_json(const TrainingReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode;
  j["caption_policy"] = r.policy;
  j["seed"] = r.seed;
  j["params_total"] = r.params_total;
  j["params_trainable"] = r.params_trainable;
  j["token_ap"] = r.final_metrics.token_ap;
  j["loss"] = r.final_metrics.loss;
  j["condition_breakdown"] = r.final_metrics.condition_breakdown;
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_ap", e.val_ap}});
  }
  j["epochs"] = epochs;
  return j;
}

namespace {

struct CellRuns {
  std::vector<double> ap;
  std::vector<TrainingReport> reports;
};

nlohmann::json cell_json(const CellRuns& c) {
  return {{"mean", mean_of(c.ap)}, {"std", std_of(c.ap)}, {"per_seed", c.ap}};
}

}  // namespace

nlohmann::json run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                            std::ostream* log) {
  if (seeds.size() < 3) throw ConfigError("ablate: need at least 3 seeds");

  struct Variant {
    const char* name;
    Mode mode;
    CaptionPolicy policy;
  };
  const Variant variants[] = {
      {"baseline", Mode::Baseline, CaptionPolicy::Structured},
      {"sa", Mode::Sa, CaptionPolicy::Structured},
      {"salgm_structured", Mode::SaLgm, CaptionPolicy::Structured},
      {"salgm_free_form", Mode::SaLgm, CaptionPolicy::FreeFormNoisy},
      {"salgm_category_list", Mode::SaLgm, CaptionPolicy::CategoryList},
      {"adapter_tuning", Mode::Adapter, CaptionPolicy::Structured},
      {"full_tuning", Mode::Full, CaptionPolicy::Structured},
  };

  std::map<std::string, CellRuns> cells;
  std::vector<double> night_truthful, night_permuted;

  for (std::uint64_t seed : seeds) {
    for (const Variant& v : variants) {
      RunConfig cfg = base;
      cfg.mode = v.mode;
      cfg.policy = v.policy;
      cfg.optim.seed = seed;
      Dataset data = make_dataset(cfg, seed);
      SlgModel model = SlgModel::build(cfg, seed);
      if (log) (*log) << "[ablate] seed " << seed << " " << v.name << "\n";
      TrainingReport rep = train_model(model, data);
      cells[v.name].ap.push_back(rep.final_metrics.token_ap);
      cells[v.name].reports.push_back(rep);

      if (std::string(v.name) == "salgm_structured") {
        // Break the caption<->condition link: shuffle captions across the
        // validation set and measure the night-condition AP.
        std::vector<StructuredCaption> permuted;
        permuted.reserve(data.val.size());
        for (const auto& s : data.val) permuted.push_back(s.caption);
        Rng perm_rng = Rng(seed).fork(0x9e21);
        perm_rng.shuffle(permuted);
        Metrics truthful = rep.final_metrics;
        Metrics shuffled = evaluate_model(model, data.val, cfg.optim.batch_size, &permuted);
        night_truthful.push_back(truthful.condition_breakdown.at("night"));
        night_permuted.push_back(shuffled.condition_breakdown.at("night"));
      }
    }
  }

  nlohmann::json j;
  j["seeds"] = seeds;
  j["config"] = base.to_json();
  nlohmann::json jc;
  for (const auto& [name, runs] : cells) jc[name] = cell_json(runs);
  j["cells"] = jc;

  const double base_mean = mean_of(cells["baseline"].ap);
  const double sa_mean = mean_of(cells["sa"].ap);
  const double full_mean = mean_of(cells["salgm_structured"].ap);
  const double ff_mean = mean_of(cells["salgm_free_form"].ap);
  const double cat_mean = mean_of(cells["salgm_category_list"].ap);
  j["delta_full_minus_baseline"] = full_mean - base_mean;

  // Pooled std guards the category-list vs structured comparison against noise.
  const double pooled_std = std::sqrt(
      0.5 * (std_of(cells["salgm_category_list"].ap) * std_of(cells["salgm_category_list"].ap) +
             std_of(cells["salgm_structured"].ap) * std_of(cells["salgm_structured"].ap)));

  std::vector<double> adapter_epoch5, full_epoch5;
  const std::size_t e5 = 4;  // epoch 5, 1-based
  for (const auto& rep : cells["adapter_tuning"].reports) {
    adapter_epoch5.push_back(rep.epochs.size() > e5 ? rep.epochs[e5].val_loss
                                                    : rep.epochs.back().val_loss);
  }
  for (const auto& rep : cells["full_tuning"].reports) {
    full_epoch5.push_back(rep.epochs.size() > e5 ? rep.epochs[e5].val_loss
                                                 : rep.epochs.back().val_loss);
  }
  const double adapter_std = std_of(adapter_epoch5);
  const double full_std = std_of(full_epoch5);

  j["caption_permutation"] = {{"night_truthful", night_truthful},
                              {"night_permuted", night_permuted},
                              {"mean_truthful", mean_of(night_truthful)},
                              {"mean_permuted", mean_of(night_permuted)}};
  j["stability"] = {{"adapter_epoch5_val_loss", adapter_epoch5},
                    {"full_epoch5_val_loss", full_epoch5},
                    {"adapter_std", adapter_std},
                    {"full_std", full_std},
                    {"adapter_le_full", adapter_std <= full_std},
                    {"flag", adapter_std <= full_std ? "ok" : "stability_inequality_failed"}};
  j["orderings"] = {
      {"baseline_lt_sa", base_mean < sa_mean},
      {"sa_lt_salgm", sa_mean < full_mean},
      {"full_minus_baseline_ge_0_03", full_mean - base_mean >= 0.03},
      {"category_le_free_form", cat_mean <= ff_mean},
      {"free_form_le_structured", ff_mean <= full_mean},
      {"category_within_one_pooled_std", cat_mean <= full_mean + pooled_std},
      {"caption_permutation_drop", mean_of(night_permuted) < mean_of(night_truthful)},
  };
  return j;
}

}  // namespace slg
