#include "slg/optimizer.hpp"

#include <cmath>

namespace slg {

AdamW::AdamW(ParamSet& params, const OptimizerConfig& cfg)
    : params_(&params), cfg_(cfg), max_stage_(params.max_stage()) {
  m_.resize(params.entries().size());
  v_.resize(params.entries().size());
  for (std::size_t i = 0; i < params.entries().size(); ++i) {
    const auto& e = params.entries()[i];
    if (e.label == ParamLabel::Adapter) {
      m_[i].assign(static_cast<std::size_t>(e.tensor.size()), real(0));
      v_[i].assign(static_cast<std::size_t>(e.tensor.size()), real(0));
    }
  }
}

double AdamW::lr_for_stage(int stage) const {
  return cfg_.base_lr * std::pow(cfg_.layer_decay, static_cast<double>(max_stage_ - stage));
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_->entries().size(); ++i) {
    auto& e = params_->entries()[i];
    if (e.label != ParamLabel::Adapter) continue;
    if (!e.tensor.has_grad()) continue;
    const double lr = lr_for_stage(e.stage);
    const auto& g = e.tensor.grad();
    auto& p = e.tensor.raw_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = static_cast<real>(kBeta1 * m[j] + (1.0 - kBeta1) * g[j]);
      v[j] = static_cast<real>(kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j]);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= static_cast<real>(lr * (mhat / (std::sqrt(vhat) + kEps) + cfg_.weight_decay * p[j]));
    }
  }
}

void AdamW::zero_grad() {
  for (auto& e : params_->entries()) e.tensor.zero_grad();
}

}  // namespace slg
