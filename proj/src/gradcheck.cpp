#include "slg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <utility>

#include "slg/model.hpp"
#include "slg/rng.hpp"
#include "slg/train.hpp"

namespace slg {

double GradReport::max_rel_err() const {
  double m = 0;
  for (const auto& r : modules) m = std::max(m, r.max_rel_err);
  return m;
}

bool GradReport::pass() const { return max_rel_err() < tolerance; }

namespace {

// Tiny gradients are compared on an absolute scale of 1e-4 so finite-difference
// noise on near-zero entries does not read as a relative blow-up.
double rel_err(double a, double f) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-4});
}

using NamedLeaves = std::vector<std::pair<std::string, Tensor>>;

NamedLeaves make_toy_leaves(std::uint64_t seed) {
  Rng rng(seed);
  NamedLeaves ls;
  auto make = [&](const std::string& name, Shape shape, double lo, double hi) {
    std::vector<real> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<real>(rng.uniform(lo, hi));
    ls.emplace_back(name, Tensor::from_data(std::move(shape), std::move(v), true));
  };
  make("toy.A", {4, 6}, -0.8, 0.8);
  make("toy.B", {6, 5}, -0.8, 0.8);
  make("toy.C", {1, 2, 6, 6}, -0.7, 0.9);
  make("toy.Kc", {3, 2, 3, 3}, -0.6, 0.6);
  make("toy.M", {2, 5, 5}, -0.9, 0.9);
  make("toy.P", {7, 2}, 0.6, 3.4);  // interior of the 5x5 map
  make("toy.gain", {5}, 0.7, 1.3);
  make("toy.bias", {5}, -0.3, 0.3);
  make("toy.W", {18, 4}, -0.5, 0.5);
  return ls;
}

// One graph through every primitive. Inputs are kept away from relu/max ties
// and bilinear cell boundaries so the derivative exists at the test point.
Tensor toy_graph(const NamedLeaves& ls) {
  const Tensor& A = ls[0].second;
  const Tensor& B = ls[1].second;
  const Tensor& C = ls[2].second;
  const Tensor& Kc = ls[3].second;
  const Tensor& M = ls[4].second;
  const Tensor& P = ls[5].second;
  const Tensor& gain = ls[6].second;
  const Tensor& bias = ls[7].second;
  const Tensor& W = ls[8].second;

  Tensor g1 = matmul(A, B);  // [4,5]
  Tensor g2 = softmax(g1, 1);
  Tensor g3 = layer_norm(g1, gain, bias);
  Tensor g4 = add(mul(g2, g3), div(g3, add_scalar(exp(g2), real(0.5))));
  Tensor cc = concat({g2, g3, g4}, 1);  // [4,15]
  Tensor pm = permute(cc, {1, 0});
  Tensor sel = select(pm, 0, 2);
  Tensor sg = sigmoid(pm);
  Tensor lg = log(add_scalar(sg, real(0.1)));
  Tensor sq = sqrt(add_scalar(mul(pm, pm), real(0.2)));
  Tensor mx = max_elementwise(g2, g3);
  Tensor vr = variance(cc, 1);
  Tensor rl = relu(add_scalar(g2, real(0.25)));  // softmax output +0.25 > 0

  Tensor c1 = gelu(conv2d(C, Kc, 2, 1));
  Tensor c2 = conv2d(pad2d_replicate(C, 1), Kc, 1, 0);
  Tensor uf = matmul(unfold_patches(C, 3), W);

  Tensor bs = bilinear_sample_px(M, P);
  Tensor p01 = add_scalar(mul_scalar(sigmoid(P), real(0.9)), real(0.05));
  Tensor bs2 = bilinear_sample(M, p01);
  Tensor ext = add(reduce_max(bs), reduce_min(bs2));

  Tensor parts = concat({mean(g4), mean(sel), mean(lg), mean(sq), mean(mx), mean(vr), mean(rl),
                         mean(c1), mean(c2), mean(uf), mean(bs), mean(bs2), ext,
                         mean(sum(cc, 0)), mean(mean(sg, 1)), mean(reshape(g4, {20}))},
                        0);
  return sum(parts);
}

struct FdProbe {
  ModuleGradReport rep;

  // entries: named tensors of one module; analytic: grads captured beforehand.
  void run(const std::string& module, std::vector<std::pair<std::string, Tensor>>& entries,
           const std::map<std::string, std::vector<real>>& analytic,
           const std::function<double()>& loss_fn, std::uint64_t seed, int max_params,
           double epsilon, double tolerance) {
    rep.module = module;
    long long total = 0;
    for (auto& [name, t] : entries) total += t.size();
    if (total == 0) return;
    Rng rng(hash_combine(seed, hash64(module)));
    const int checks = static_cast<int>(std::min<long long>(max_params, total));
    for (int c = 0; c < checks; ++c) {
      long long pick = static_cast<long long>(rng.next_u64() % static_cast<std::uint64_t>(total));
      std::size_t li = 0;
      while (pick >= entries[li].second.size()) {
        pick -= entries[li].second.size();
        ++li;
      }
      Tensor& t = entries[li].second;
      const std::size_t j = static_cast<std::size_t>(pick);
      const real saved = t.raw_data()[j];
      double lp, lm;
      {
        NoGradGuard ng;
        t.raw_data()[j] = saved + static_cast<real>(epsilon);
        lp = loss_fn();
        t.raw_data()[j] = saved - static_cast<real>(epsilon);
        lm = loss_fn();
        t.raw_data()[j] = saved;
      }
      const double fd = (lp - lm) / (2 * epsilon);
      const double an = analytic.at(entries[li].first)[j];
      const double err = rel_err(an, fd);
      ++rep.params_checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_param = entries[li].first + "[" + std::to_string(j) + "]";
      }
      if (err >= tolerance) {
        rep.offenders.push_back(entries[li].first + "[" + std::to_string(j) + "]");
      }
    }
  }
};

std::map<std::string, std::vector<real>> capture_grads(
    const std::vector<std::pair<std::string, Tensor>>& leaves) {
  std::map<std::string, std::vector<real>> out;
  for (const auto& [name, t] : leaves) {
    out[name] = t.has_grad() ? t.grad()
                             : std::vector<real>(static_cast<std::size_t>(t.size()), real(0));
  }
  return out;
}

const char* module_of(const std::string& param_name) {
  if (param_name.rfind("backbone.", 0) == 0) return "frozen_backbone";
  if (param_name.rfind("encoder.", 0) == 0) return "structure_encoder";
  if (param_name.rfind("ff.", 0) == 0) return "ff_adapter";
  if (param_name.rfind("lgm.", 0) == 0) return "lgm";
  return "harness";  // task head + loss path
}

}  // namespace

GradReport gradcheck(const std::string& scope, std::uint64_t seed, int max_per_module,
                     double epsilon) {
  GradReport report;
  const bool all = scope == "all";

  if (all || scope == "tensor_autodiff") {
    NamedLeaves leaves = make_toy_leaves(seed);
    Tape::active().clear();
    for (auto& [name, t] : leaves) t.zero_grad();
    backward(toy_graph(leaves));
    const auto analytic = capture_grads(leaves);
    Tape::active().clear();

    auto loss_fn = [&leaves]() {
      Tape::active().clear();
      return toy_graph(leaves).item();
    };
    FdProbe probe;
    probe.run("tensor_autodiff", leaves, analytic, loss_fn, seed, max_per_module, epsilon,
              report.tolerance);
    report.modules.push_back(std::move(probe.rep));
    Tape::active().clear();
  }

  static const char* kModelModules[] = {"frozen_backbone", "structure_encoder", "ff_adapter",
                                        "lgm", "harness"};
  bool want_model = all;
  for (const char* m : kModelModules) {
    if (scope == m) want_model = true;
  }
  if (want_model) {
    RunConfig cfg = RunConfig::gradcheck_config();
    cfg.mode = Mode::SaLgm;
    cfg.optim.seed = seed;
    SlgModel model = SlgModel::build(cfg, seed);
    // All parameters participate, the frozen backbone included: the check is
    // about the math, not the partition. Jitter opens the zero-initialized
    // gates and heads so every path carries gradient.
    Rng jitter(hash_combine(seed, 0x71f7e5));
    for (auto& e : model.params().entries()) {
      e.tensor.set_requires_grad(true);
      for (auto& x : e.tensor.raw_data()) x += static_cast<real>(jitter.normal() * 0.03);
    }
    Dataset data = make_dataset(cfg, hash_combine(seed, 0xda7a));
    const std::vector<int> idxs = {0, 1};
    const Batch batch = make_batch(data.train, idxs);

    auto loss_value = [&model, &batch]() {
      Tape::active().clear();
      Tensor logits = model.forward(batch);
      return model.loss(logits, batch.target).item();
    };

    Tape::active().clear();
    for (auto& e : model.params().entries()) e.tensor.zero_grad();
    {
      Tensor logits = model.forward(batch);
      backward(model.loss(logits, batch.target));
    }
    std::vector<std::pair<std::string, Tensor>> named;
    for (auto& e : model.params().entries()) named.emplace_back(e.name, e.tensor);
    const auto analytic = capture_grads(named);
    Tape::active().clear();

    for (const char* module : kModelModules) {
      if (!all && scope != module) continue;
      std::vector<std::pair<std::string, Tensor>> entries;
      for (auto& e : model.params().entries()) {
        if (std::string(module_of(e.name)) == module) entries.emplace_back(e.name, e.tensor);
      }
      FdProbe probe;
      probe.run(module, entries, analytic, loss_value, seed, max_per_module, epsilon,
                report.tolerance);
      report.modules.push_back(std::move(probe.rep));
    }
    Tape::active().clear();
  }

  if (report.modules.empty()) throw ConfigError("gradcheck: unknown scope '" + scope + "'");
  return report;
}

nlohmann::json grad_report_json(const GradReport& r) {
  nlohmann::json j;
  j["tolerance"] = r.tolerance;
  j["max_rel_err"] = r.max_rel_err();
  j["pass"] = r.pass();
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : r.modules) {
    mods.push_back({{"module", m.module},
                    {"params_checked", m.params_checked},
                    {"max_rel_err", m.max_rel_err},
                    {"worst_param", m.worst_param},
                    {"offenders", m.offenders}});
  }
  j["modules"] = mods;
  return j;
}

}  // namespace slg
