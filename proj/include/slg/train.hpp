#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "slg/metrics.hpp"
#include "slg/model.hpp"
#include "slg/optimizer.hpp"

namespace slg {

struct Dataset {
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> val;
};

Dataset make_dataset(const RunConfig& cfg, std::uint64_t seed);

struct EpochStats {
  double train_loss = 0;
  double val_loss = 0;
  double val_ap = 0;
};

struct TrainingReport {
  std::string mode;
  std::string policy;
  std::uint64_t seed = 0;
  long long params_total = 0;
  long long params_trainable = 0;
  std::vector<EpochStats> epochs;
  Metrics final_metrics;
};

// Evaluates pooled token AP, mean BCE loss, and a per-condition AP breakdown.
// caption_override, when given, must be aligned with `samples`.
Metrics evaluate_model(const SlgModel& model, const std::vector<SyntheticSample>& samples,
                       int batch_size,
                       const std::vector<StructuredCaption>* caption_override = nullptr);

TrainingReport train_model(SlgModel& model, const Dataset& data, std::ostream* log = nullptr);

nlohmann::json training_report_json(const TrainingReport& r);

// Runs {baseline, +SA, +SA+LGM} x caption policies plus full tuning over the
// given seeds and emits the comparison grid with ordering checks.
nlohmann::json run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                            std::ostream* log = nullptr);

}  // namespace slg
