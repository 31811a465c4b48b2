#pragma once

#include <cstdint>
#include <vector>

#include "slg/params.hpp"

namespace slg {

struct OptimizerConfig {
  double base_lr = 1e-4;
  double weight_decay = 0.1;
  double layer_decay = 0.7;
  int epochs = 20;
  int batch_size = 8;
  std::uint64_t seed = 1;
};

// AdamW with decoupled weight decay and layer-wise LR decay:
// lr(stage) = base_lr * layer_decay^(max_stage - stage). Steps only the
// parameters labeled Adapter; frozen entries are never touched.
class AdamW {
 public:
  AdamW(ParamSet& params, const OptimizerConfig& cfg);

  void step();
  void zero_grad();

  double lr_for_stage(int stage) const;
  int max_stage() const { return max_stage_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  ParamSet* params_;
  OptimizerConfig cfg_;
  int max_stage_;
  long long t_ = 0;
  std::vector<std::vector<real>> m_, v_;
};

}  // namespace slg
