#include <algorithm>
#include <vector>

#include <doctest.h>

#include "slg/errors.hpp"
#include "slg/metrics.hpp"
#include "slg/rng.hpp"

using namespace slg;

namespace {

// O(n^2) sweep: precision/recall at every distinct threshold, step-integrated.
double ap_sweep_oracle(const std::vector<real>& scores, const std::vector<std::uint8_t>& labels) {
  long long positives = 0;
  for (auto l : labels) positives += l ? 1 : 0;
  if (positives == 0) return 0.0;
  std::vector<real> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<real>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double ap = 0, prev_recall = 0;
  for (real th : thresholds) {
    long long tp = 0, pred = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) {
        ++pred;
        tp += labels[i] ? 1 : 0;
      }
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(pred);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

TEST_CASE("a perfect predictor scores AP 1") {
  std::vector<real> scores = {0.9, 0.8, 0.2, 0.1};
  std::vector<std::uint8_t> labels = {1, 1, 0, 0};
  CHECK(token_average_precision(scores, labels) == 1.0);
}

TEST_CASE("a constant predictor scores the positive prevalence") {
  std::vector<real> scores(20, real(0.5));
  std::vector<std::uint8_t> labels(20, 0);
  labels[3] = labels[7] = labels[8] = labels[15] = 1;
  CHECK(token_average_precision(scores, labels) == doctest::Approx(4.0 / 20).epsilon(1e-12));
}

TEST_CASE("AP matches the all-thresholds sweep oracle on random rankings") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 40 + rng.uniform_int(60);
    std::vector<real> scores(static_cast<std::size_t>(n));
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
    for (auto& s : scores) {
      // quantized scores create deliberate ties
      s = static_cast<real>(rng.uniform_int(12)) / 12;
    }
    for (auto& l : labels) l = rng.uniform() < 0.25 ? 1 : 0;
    if (std::none_of(labels.begin(), labels.end(), [](std::uint8_t l) { return l; })) {
      labels[0] = 1;
    }
    const double got = token_average_precision(scores, labels);
    const double want = ap_sweep_oracle(scores, labels);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("degenerate inputs") {
  CHECK_THROWS_AS(token_average_precision({}, {}), ShapeError);
  CHECK_THROWS_AS(token_average_precision({1.0}, {1, 0}), ShapeError);
  // no positives -> 0 by convention
  CHECK(token_average_precision({0.1, 0.9}, {0, 0}) == 0.0);
}
