// Acceptance suite: one pass/fail line per criterion, exit code 0 only if all
// criteria hold. Heavier than the unit tests; expect a few minutes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <vector>

#include "slg/checkpoint.hpp"
#include "slg/gradcheck.hpp"
#include "slg/structure_encoder.hpp"
#include "slg/train.hpp"

using namespace slg;

namespace {

struct Gate {
  int passed = 0;
  int failed = 0;

  void report(int idx, bool ok, const std::string& name, const std::string& detail) {
    std::printf("[%2d/10] %s  %-28s %s\n", idx, ok ? "PASS" : "FAIL", name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    ok ? ++passed : ++failed;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---- criterion 2: literal triple-loop evaluation of the attention formula ----
std::vector<real> attention_oracle(const std::vector<real>& tokens, int N, int T, int D,
                                   const StructuralPyramid& pyr, const std::vector<real>& w_off,
                                   const std::vector<real>& b_off, const std::vector<real>& w_wt,
                                   const std::vector<real>& b_wt, const std::vector<real>& w_v,
                                   int K, const Tensor& ref) {
  std::vector<real> out(static_cast<std::size_t>(N) * T * D, 0);
  for (int n = 0; n < N; ++n) {
    for (int q = 0; q < T; ++q) {
      const real* tok = tokens.data() + (static_cast<std::size_t>(n) * T + q) * D;
      std::vector<double> off(static_cast<std::size_t>(3 * K * 2));
      for (int j = 0; j < 3 * K * 2; ++j) {
        double acc = b_off[static_cast<std::size_t>(j)];
        for (int d = 0; d < D; ++d) acc += tok[d] * w_off[static_cast<std::size_t>(d) * (3 * K * 2) + j];
        off[static_cast<std::size_t>(j)] = acc;
      }
      std::vector<double> w(static_cast<std::size_t>(3 * K));
      double mx = -1e300;
      for (int j = 0; j < 3 * K; ++j) {
        double acc = b_wt[static_cast<std::size_t>(j)];
        for (int d = 0; d < D; ++d) acc += tok[d] * w_wt[static_cast<std::size_t>(d) * (3 * K) + j];
        w[static_cast<std::size_t>(j)] = acc;
        mx = std::max(mx, acc);
      }
      double z = 0;
      for (auto& v : w) {
        v = std::exp(v - mx);
        z += v;
      }
      for (auto& v : w) v /= z;
      const double rx = ref.data()[static_cast<std::size_t>(q) * 2 + 0];
      const double ry = ref.data()[static_cast<std::size_t>(q) * 2 + 1];
      for (int l = 0; l < 3; ++l) {
        const Tensor& lvl = pyr.levels[static_cast<std::size_t>(l)];
        const int lh = lvl.dim(2), lw = lvl.dim(3);
        for (int k = 0; k < K; ++k) {
          const double px = rx * lw - 0.5 + off[static_cast<std::size_t>((l * K + k) * 2 + 0)];
          const double py = ry * lh - 0.5 + off[static_cast<std::size_t>((l * K + k) * 2 + 1)];
          const double xc = std::clamp(px, 0.0, static_cast<double>(lw - 1));
          const double yc = std::clamp(py, 0.0, static_cast<double>(lh - 1));
          const int x0 = static_cast<int>(std::floor(xc)), y0 = static_cast<int>(std::floor(yc));
          const int x1 = std::min(x0 + 1, lw - 1), y1 = std::min(y0 + 1, lh - 1);
          const double fx = xc - x0, fy = yc - y0;
          const double a = w[static_cast<std::size_t>(l * K + k)];
          // literal A * W_v * F(phi + dp): project the sample, then weight
          for (int j = 0; j < D; ++j) {
            double proj = 0;
            for (int d = 0; d < D; ++d) {
              auto at = [&](int yy, int xx) {
                return static_cast<double>(
                    lvl.data()[((static_cast<std::size_t>(n) * D + d) * lh + yy) * lw + xx]);
              };
              const double s = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                               fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
              proj += s * w_v[static_cast<std::size_t>(d) * D + j];
            }
            out[(static_cast<std::size_t>(n) * T + q) * D + j] += static_cast<real>(a * proj);
          }
        }
      }
    }
  }
  return out;
}

bool criterion2_eq8_oracle(std::string& detail) {
  double worst = 0;
  Rng rng(2024);
  for (int inst = 0; inst < 20; ++inst) {
    FfAdapterConfig cfg;
    cfg.width = 4 + 2 * (inst % 4);
    cfg.depth = 1;
    cfg.k_points = 1 + inst % 4;
    const std::array<int, 3> ext = {5, 3, 2};
    FfAdapter ad = FfAdapter::init(cfg, ext, 500 + static_cast<std::uint64_t>(inst));
    ParamSet ps;
    ad.collect(ps, ParamLabel::Adapter);
    Rng jr(900 + static_cast<std::uint64_t>(inst));
    for (auto& e : ps.entries()) {
      for (auto& x : e.tensor.raw_data()) x += static_cast<real>(jr.normal() * 0.5);
    }
    const int grid = 4, T = 16, N = 2;
    std::vector<real> tok(static_cast<std::size_t>(N) * T * cfg.width);
    for (auto& x : tok) x = static_cast<real>(rng.uniform(-1, 1));
    Tensor tokens = Tensor::from_data({N, T, cfg.width}, tok);
    StructuralPyramid pyr;
    for (int l = 0; l < 3; ++l) {
      std::vector<real> lv(static_cast<std::size_t>(N) * cfg.width * ext[static_cast<std::size_t>(l)] *
                           ext[static_cast<std::size_t>(l)]);
      for (auto& x : lv) x = static_cast<real>(rng.uniform(-1, 1));
      pyr.levels[static_cast<std::size_t>(l)] = Tensor::from_data(
          {N, cfg.width, ext[static_cast<std::size_t>(l)], ext[static_cast<std::size_t>(l)]}, lv);
    }
    Tensor ref = reference_points(grid, grid);
    Tensor got = ad.sparse_attend(0, tokens, pyr, ref);
    const auto want = attention_oracle(
        tok, N, T, cfg.width, pyr, ps.find("ff.stage0.off.w")->tensor.data(),
        ps.find("ff.stage0.off.b")->tensor.data(), ps.find("ff.stage0.wt.w")->tensor.data(),
        ps.find("ff.stage0.wt.b")->tensor.data(), ps.find("ff.stage0.wv")->tensor.data(),
        cfg.k_points, ref);
    for (std::size_t i = 0; i < want.size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(got.data()[i] - want[i])));
    }
  }
  detail = "max |vectorized - loop oracle| = " + fmt(worst) + " over 20 instances";
  return worst < 1e-10;
}

bool criterion3_ssim(std::string& detail) {
  Rng rng(33);
  // self-similarity
  double self_worst = 0;
  for (int t = 0; t < 5; ++t) {
    std::vector<real> v(81);
    for (auto& x : v) x = static_cast<real>(rng.uniform(0, 2));
    Tensor g = Tensor::from_data({1, 1, 9, 9}, v);
    Tensor m = ssim_alignment(g, g, 7, 0.01, 0.03);
    for (real x : m.data()) self_worst = std::max(self_worst, std::abs(x - 1.0));
  }
  // bound on 100 random inputs
  double bound_worst = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<real> a(64), b(64);
    for (auto& x : a) x = static_cast<real>(rng.uniform(0, rng.uniform(0.4, 3)));
    for (auto& x : b) x = static_cast<real>(rng.uniform(0, rng.uniform(0.4, 3)));
    Tensor ta = Tensor::from_data({1, 1, 8, 8}, a);
    Tensor tb = Tensor::from_data({1, 1, 8, 8}, b);
    Tensor m = ssim_alignment(ta, reference_map(ta, tb), 7, 0.01, 0.03);
    for (real x : m.data()) bound_worst = std::max(bound_worst, std::abs(static_cast<double>(x)));
  }
  // windowed-statistics oracle
  double oracle_worst = 0;
  const int h = 7, w = 8, win = 7, half = win / 2;
  std::vector<real> av(static_cast<std::size_t>(h) * w), rv(static_cast<std::size_t>(h) * w);
  for (auto& x : av) x = static_cast<real>(rng.uniform(0, 1.5));
  for (auto& x : rv) x = static_cast<real>(rng.uniform(0, 1.5));
  Tensor a = Tensor::from_data({1, 1, h, w}, av);
  Tensor r = Tensor::from_data({1, 1, h, w}, rv);
  Tensor m = ssim_alignment(a, r, win, 0.01, 0.03);
  double rmin = rv[0], rmax = rv[0];
  for (real v : rv) {
    rmin = std::min<double>(rmin, v);
    rmax = std::max<double>(rmax, v);
  }
  const double L = std::max(rmax - rmin, 1e-9);
  const double xi1 = 1e-4 * L * L, xi2 = 9e-4 * L * L;
  auto at = [&](const std::vector<real>& t, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return static_cast<double>(t[static_cast<std::size_t>(y) * w + x]);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sa = 0, sr = 0, saa = 0, srr = 0, sar = 0;
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
          const double va = at(av, y + dy, x + dx), vr = at(rv, y + dy, x + dx);
          sa += va;
          sr += vr;
          saa += va * va;
          srr += vr * vr;
          sar += va * vr;
        }
      const double n = win * win;
      const double mu_a = sa / n, mu_r = sr / n;
      const double want = (2 * mu_a * mu_r + xi1) * (2 * (sar / n - mu_a * mu_r) + xi2) /
                          ((mu_a * mu_a + mu_r * mu_r + xi1) *
                           ((saa / n - mu_a * mu_a) + (srr / n - mu_r * mu_r) + xi2));
      oracle_worst = std::max(
          oracle_worst, std::abs(static_cast<double>(m.data()[static_cast<std::size_t>(y) * w + x]) - want));
    }
  detail = "self-sim dev " + fmt(self_worst) + ", |M'| max " + fmt(bound_worst) + ", oracle dev " +
           fmt(oracle_worst);
  return self_worst < 1e-6 && bound_worst <= 1.0 + 1e-9 && oracle_worst < 1e-10;
}

bool criterion4_identity(std::string& detail) {
  RunConfig cfg;  // default desk config
  cfg.mode = Mode::Adapter;
  cfg.val_samples = 4;
  cfg.train_samples = 4;
  cfg.finalize();
  SlgModel full = SlgModel::build(cfg, 7);
  RunConfig bcfg = cfg;
  bcfg.mode = Mode::Baseline;
  SlgModel baseline = SlgModel::build(bcfg, 7);
  Dataset data = make_dataset(cfg, 7);
  NoGradGuard ng;
  Batch b = make_batch(data.val, {0, 1, 2, 3});
  Tensor lf = full.forward(b);
  Tensor lb = baseline.forward(b);
  double worst = 0;
  for (std::size_t i = 0; i < lf.data().size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(lf.data()[i] - lb.data()[i])));
  }
  detail = "max |full - frozen+head| = " + fmt(worst) + " on the default config";
  return worst < 1e-12;
}

bool criterion5_frozen(std::string& detail) {
  RunConfig cfg;  // default desk config
  cfg.mode = Mode::Adapter;
  cfg.train_samples = 8;
  cfg.val_samples = 4;
  cfg.optim.batch_size = 1;
  cfg.finalize();
  Dataset data = make_dataset(cfg, 11);
  SlgModel model = SlgModel::build(cfg, 11);

  const double fraction = static_cast<double>(model.params().count_label(ParamLabel::Adapter)) /
                          static_cast<double>(model.params().count_total());

  std::map<std::string, std::vector<real>> before;
  for (const auto& e : model.params().entries()) {
    if (e.label == ParamLabel::Frozen) before[e.name] = e.tensor.data();
  }
  AdamW opt(model.params(), cfg.optim);
  Rng order(3);
  for (int step = 0; step < 100; ++step) {
    Tape::active().clear();
    Batch b = make_batch(data.train, {order.uniform_int(static_cast<int>(data.train.size()))});
    Tensor logits = model.forward(b);
    Tensor loss = model.loss(logits, b.target);
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  Tape::active().clear();
  bool identical = true;
  for (const auto& e : model.params().entries()) {
    if (e.label == ParamLabel::Frozen && before.at(e.name) != e.tensor.data()) identical = false;
  }
  detail = "100 steps: frozen " + std::string(identical ? "byte-identical" : "CHANGED") +
           ", trainable fraction " + fmt(fraction) + " (<= 0.20)";
  return identical && fraction <= 0.20;
}

bool criterion10_dominance(std::string& detail) {
  int wins = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(4000 + static_cast<std::uint64_t>(trial));
    const int n = 12;
    std::vector<real> av(static_cast<std::size_t>(n) * n, 0);
    for (int e = 0; e < 3; ++e) {
      const int col = 2 + rng.uniform_int(n - 4);
      for (int y = 0; y < n; ++y)
        for (int x = col; x < n; ++x) av[static_cast<std::size_t>(y) * n + x] += real(0.8);
    }
    std::vector<real> bv(static_cast<std::size_t>(n) * n);
    for (auto& x : bv) x = static_cast<real>(rng.uniform(0, 0.25));
    Tensor A = Tensor::from_data({1, 1, n, n}, av);
    Tensor B = Tensor::from_data({1, 1, n, n}, bv);
    Tensor ga = sobel_magnitude(A), gb = sobel_magnitude(B);
    Tensor ref = reference_map(ga, gb);
    Tensor gate_a = sigmoid(ssim_alignment(ga, ref, 7, 0.01, 0.03));
    Tensor gate_b = sigmoid(ssim_alignment(gb, ref, 7, 0.01, 0.03));
    if (mean(gate_a).item() > mean(gate_b).item()) ++wins;
  }
  detail = "edge-bearing modality wins the gate on " + std::to_string(wins) + "/100 trials";
  return wins >= 95;
}

}  // namespace

int main() {
  Gate gate;
  std::printf("acceptance suite: desk-scale verification\n");

  {
    auto t0 = std::chrono::steady_clock::now();
    GradReport rep = gradcheck("all", 0);
    const double secs = seconds_since(t0);
    std::string detail = "max rel err " + fmt(rep.max_rel_err()) + " across";
    for (const auto& m : rep.modules) detail += " " + m.module + "=" + fmt(m.max_rel_err);
    detail += " (" + fmt(secs) + "s)";
    gate.report(1, rep.pass() && secs < 120, "gradient integrity", detail);
  }
  {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    const bool ok = criterion2_eq8_oracle(detail);
    const double secs = seconds_since(t0);
    gate.report(2, ok && secs < 10, "sparse-attention oracle", detail + " (" + fmt(secs) + "s)");
  }
  {
    std::string detail;
    gate.report(3, criterion3_ssim(detail), "ssim suite", detail);
  }
  {
    std::string detail;
    gate.report(4, criterion4_identity(detail), "identity at init", detail);
  }
  {
    std::string detail;
    gate.report(5, criterion5_frozen(detail), "frozen immutability", detail);
  }

  // criteria 6-9 come from one ablation grid
  nlohmann::json ab;
  double ablation_secs = 0;
  {
    auto t0 = std::chrono::steady_clock::now();
    ab = run_ablation(RunConfig::ablation_config(), {1, 2, 3});
    ablation_secs = seconds_since(t0);
    const auto ord = ab["orderings"];
    const double base = ab["cells"]["baseline"]["mean"].get<double>();
    const double sa = ab["cells"]["sa"]["mean"].get<double>();
    const double full = ab["cells"]["salgm_structured"]["mean"].get<double>();
    {
      const bool ok = ord["baseline_lt_sa"].get<bool>() && ord["sa_lt_salgm"].get<bool>() &&
                      ord["full_minus_baseline_ge_0_03"].get<bool>() && ablation_secs < 900;
      gate.report(6, ok, "component ablation ordering",
                  "AP baseline " + fmt(base) + " < +SA " + fmt(sa) + " < +SA+LGM " + fmt(full) +
                      ", gap " + fmt(full - base) + " (" + fmt(ablation_secs) + "s total)");
    }
    {
      const double cat = ab["cells"]["salgm_category_list"]["mean"].get<double>();
      const double ff = ab["cells"]["salgm_free_form"]["mean"].get<double>();
      const bool ok = ord["category_le_free_form"].get<bool>() &&
                      ord["free_form_le_structured"].get<bool>() &&
                      ord["category_within_one_pooled_std"].get<bool>();
      gate.report(7, ok, "prompt granularity ordering",
                  "AP category " + fmt(cat) + " <= free-form " + fmt(ff) + " <= structured " +
                      fmt(full));
    }
    {
      const double truthful = ab["caption_permutation"]["mean_truthful"].get<double>();
      const double permuted = ab["caption_permutation"]["mean_permuted"].get<double>();
      gate.report(8, permuted < truthful, "caption causality",
                  "night AP truthful " + fmt(truthful) + " vs permuted " + fmt(permuted));
    }
    {
      const double astd = ab["stability"]["adapter_std"].get<double>();
      const double fstd = ab["stability"]["full_std"].get<double>();
      const std::string flag = ab["stability"]["flag"].get<std::string>();
      gate.report(9, astd <= fstd, "tuning stability",
                  "epoch-5 val-loss std adapter " + fmt(astd) + " vs full " + fmt(fstd) +
                      " [flag: " + flag + "]");
    }
  }
  {
    std::string detail;
    gate.report(10, criterion10_dominance(detail), "structural dominance", detail);
  }

  std::printf("RESULT: %d/10 criteria passed\n", gate.passed);
  if (gate.failed) {
    std::printf("ablation report for inspection:\n%s\n", ab.dump(2).c_str());
  }
  return gate.failed == 0 ? 0 : 1;
}
