#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "slg/real.hpp"

namespace slg {

struct ModuleGradReport {
  std::string module;
  int params_checked = 0;
  double max_rel_err = 0;
  std::string worst_param;
  std::vector<std::string> offenders;  // parameters above tolerance
};

struct GradReport {
  std::vector<ModuleGradReport> modules;
  double tolerance = 1e-4;

  double max_rel_err() const;
  bool pass() const;
};

// Central finite differences (eps = 1e-5) against the analytic backward pass,
// on up to `max_per_module` randomly chosen parameters per module. The model
// scopes run a compact full-system configuration with every parameter
// gradient-enabled and jittered off its init so no path is gated shut.
// Scope: all | tensor_autodiff | frozen_backbone | structure_encoder |
//        ff_adapter | lgm | harness.
GradReport gradcheck(const std::string& scope, std::uint64_t seed, int max_per_module = 200,
                     double epsilon = 1e-5);

nlohmann::json grad_report_json(const GradReport& r);

}  // namespace slg
