#include "slg/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "slg/errors.hpp"

namespace slg {

double token_average_precision(const std::vector<real>& scores,
                               const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("token_ap: score/label size mismatch");
  if (scores.empty()) throw ShapeError("token_ap: empty input");
  const std::size_t n = scores.size();
  long long positives = 0;
  for (auto l : labels) positives += l ? 1 : 0;
  if (positives == 0) return 0.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0;
  long long tp = 0, seen = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    long long group_tp = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      group_tp += labels[order[j]] ? 1 : 0;
      ++j;
    }
    tp += group_tp;
    seen += static_cast<long long>(j - i);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += precision * static_cast<double>(group_tp);
    i = j;
  }
  return ap / static_cast<double>(positives);
}

}  // namespace slg
