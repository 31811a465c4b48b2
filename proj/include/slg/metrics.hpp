#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slg/real.hpp"

namespace slg {

// Average precision over a pooled token ranking. Equal scores are treated as
// one group credited with the precision at the end of the group, so a constant
// predictor scores exactly the positive prevalence.
double token_average_precision(const std::vector<real>& scores,
                               const std::vector<std::uint8_t>& labels);

struct Metrics {
  double token_ap = 0;
  double loss = 0;
  std::map<std::string, double> condition_breakdown;  // per-condition token AP
};

}  // namespace slg
