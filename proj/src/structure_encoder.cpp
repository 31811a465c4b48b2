#include "slg/structure_encoder.hpp"

#include <cmath>

#include "slg/rng.hpp"

namespace slg {

namespace {

Tensor conv_weight(Rng& rng, int co, int ci, int k) {
  const real s = std::sqrt(real(2) / static_cast<real>(ci * k * k));
  std::vector<real> w(static_cast<std::size_t>(co) * ci * k * k);
  for (auto& x : w) x = static_cast<real>(rng.normal()) * s;
  return Tensor::from_data({co, ci, k, k}, std::move(w));
}

Tensor bias_vec(int c) { return Tensor::zeros({c}); }

// conv bias [C] broadcast over [N,C,h,w]
Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  return add(x, reshape(b, {b.dim(0), 1, 1}));
}

const Tensor& sobel_kernels() {
  static const Tensor k = [] {
    // two 3x3 stencils, Gx then Gy
    std::vector<real> w = {
        -1, 0, 1, -2, 0, 2, -1, 0, 1,   // Gx
        -1, -2, -1, 0, 0, 0, 1, 2, 1,   // Gy
    };
    return Tensor::from_data({2, 1, 3, 3}, std::move(w));
  }();
  return k;
}

// Uniform window of ones; the 1/n^2 factor is applied afterwards.
Tensor box_kernel(int window) {
  return Tensor::full({1, 1, window, window}, real(1));
}

Tensor box_mean(const Tensor& map, int window) {
  const int pad = (window - 1) / 2;
  Tensor padded = pad2d_replicate(map, pad);
  Tensor summed = conv2d(padded, box_kernel(window), 1, 0);
  return mul_scalar(summed, real(1) / static_cast<real>(window * window));
}

}  // namespace

Tensor sobel_magnitude(const Tensor& feat) {
  if (feat.rank() != 4) throw ShapeError("sobel_magnitude: expected [N,C,h,w]");
  const int N = feat.dim(0), C = feat.dim(1), h = feat.dim(2), w = feat.dim(3);
  Tensor flat = reshape(feat, {N * C, 1, h, w});
  Tensor padded = pad2d_replicate(flat, 1);
  Tensor g = conv2d(padded, sobel_kernels(), 1, 0);  // [N*C, 2, h, w]
  Tensor gx = select(g, 1, 0);
  Tensor gy = select(g, 1, 1);
  Tensor mag = sqrt(add_scalar(add(mul(gx, gx), mul(gy, gy)), real(1e-12)));
  Tensor per_channel = reshape(mag, {N, C, h, w});
  return mean(per_channel, 1, true);  // [N,1,h,w]
}

Tensor reference_map(const Tensor& grad_a, const Tensor& grad_b) {
  if (grad_a.shape() != grad_b.shape()) {
    throw ShapeError("reference_map: shape mismatch " + shape_str(grad_a.shape()) + " vs " +
                     shape_str(grad_b.shape()));
  }
  return max_elementwise(grad_a, grad_b);
}

Tensor ssim_alignment(const Tensor& grad_m, const Tensor& grad_ref, int window, double k1,
                      double k2) {
  if (grad_m.shape() != grad_ref.shape()) {
    throw ShapeError("ssim_alignment: shape mismatch");
  }
  Tensor range = sub(reduce_max(grad_ref), reduce_min(grad_ref));
  Tensor L = max_elementwise(range, Tensor::scalar(real(1e-9)));
  Tensor xi1 = mul(mul_scalar(L, static_cast<real>(k1)), mul_scalar(L, static_cast<real>(k1)));
  Tensor xi2 = mul(mul_scalar(L, static_cast<real>(k2)), mul_scalar(L, static_cast<real>(k2)));

  Tensor mu_m = box_mean(grad_m, window);
  Tensor mu_r = box_mean(grad_ref, window);
  Tensor var_m = sub(box_mean(mul(grad_m, grad_m), window), mul(mu_m, mu_m));
  Tensor var_r = sub(box_mean(mul(grad_ref, grad_ref), window), mul(mu_r, mu_r));
  Tensor cov = sub(box_mean(mul(grad_m, grad_ref), window), mul(mu_m, mu_r));

  Tensor num = mul(add(mul_scalar(mul(mu_m, mu_r), 2), xi1), add(mul_scalar(cov, 2), xi2));
  Tensor den = mul(add(add(mul(mu_m, mu_m), mul(mu_r, mu_r)), xi1),
                   add(add(var_m, var_r), xi2));
  return div(num, den);
}

Tensor fuse_level(const Tensor& feat_v, const Tensor& feat_t, const Tensor& sim_v,
                  const Tensor& sim_t) {
  if (feat_v.shape() != feat_t.shape()) throw ShapeError("fuse_level: feature shape mismatch");
  return add(mul(sigmoid(sim_v), feat_v), mul(sigmoid(sim_t), feat_t));
}

StructureEncoder StructureEncoder::init(const StructureEncoderConfig& cfg, std::uint64_t seed) {
  if (cfg.stem_channels < 1 || cfg.pyramid_channels < 1 || cfg.out_width < 1) {
    throw ConfigError("structure_encoder: non-positive channel config");
  }
  if (cfg.ssim_window < 1 || cfg.ssim_window % 2 == 0) {
    throw ConfigError("structure_encoder: ssim_window must be odd");
  }
  StructureEncoder enc;
  enc.cfg_ = cfg;
  Rng rng(seed);
  const int Cs = cfg.stem_channels;
  const int Cl = cfg.pyramid_channels;
  enc.stem1_w_ = conv_weight(rng, Cs, 3, 3);
  enc.stem1_b_ = bias_vec(Cs);
  enc.stem2_w_ = conv_weight(rng, Cs, Cs, 3);
  enc.stem2_b_ = bias_vec(Cs);
  const int kernels[3] = {3, 5, 7};
  for (int l = 0; l < 3; ++l) {
    const int ci = l == 0 ? Cs : Cl;
    enc.pyr_w_[static_cast<std::size_t>(l)] = conv_weight(rng, Cl, ci, kernels[l]);
    enc.pyr_b_[static_cast<std::size_t>(l)] = bias_vec(Cl);
    enc.proj_w_[static_cast<std::size_t>(l)] = conv_weight(rng, cfg.out_width, Cl, 1);
    enc.proj_b_[static_cast<std::size_t>(l)] = bias_vec(cfg.out_width);
  }
  return enc;
}

std::pair<Tensor, Tensor> StructureEncoder::stem(const Tensor& visible,
                                                 const Tensor& thermal) const {
  if (visible.rank() != 4 || visible.dim(1) != 3) throw ShapeError("stem: visible must be [N,3,H,W]");
  if (thermal.rank() != 4 || thermal.dim(1) != 1) throw ShapeError("stem: thermal must be [N,1,H,W]");
  if (visible.dim(0) != thermal.dim(0) || visible.dim(2) != thermal.dim(2) ||
      visible.dim(3) != thermal.dim(3)) {
    throw ShapeError("stem: modalities must be spatially aligned");
  }
  Tensor thermal3 = concat({thermal, thermal, thermal}, 1);
  auto run = [this](const Tensor& x) {
    Tensor h = gelu(add_channel_bias(conv2d(x, stem1_w_, 2, 1), stem1_b_));
    return gelu(add_channel_bias(conv2d(h, stem2_w_, 2, 1), stem2_b_));
  };
  return {run(visible), run(thermal3)};
}

std::array<Tensor, 3> StructureEncoder::pyramid(const Tensor& stem_out) const {
  const int pads[3] = {1, 2, 3};
  std::array<Tensor, 3> out;
  Tensor cur = stem_out;
  for (int l = 0; l < 3; ++l) {
    cur = gelu(add_channel_bias(
        conv2d(cur, pyr_w_[static_cast<std::size_t>(l)], 2, pads[l]),
        pyr_b_[static_cast<std::size_t>(l)]));
    out[static_cast<std::size_t>(l)] = cur;
  }
  return out;
}

Tensor StructureEncoder::project(int level, const Tensor& fused) const {
  if (level < 0 || level > 2) throw ShapeError("project: level out of range");
  return add_channel_bias(conv2d(fused, proj_w_[static_cast<std::size_t>(level)], 1, 0),
                          proj_b_[static_cast<std::size_t>(level)]);
}

EncoderTrace StructureEncoder::forward(const Tensor& visible, const Tensor& thermal) const {
  EncoderTrace tr;
  auto [sv, st] = stem(visible, thermal);
  tr.stem_v = sv;
  tr.stem_t = st;
  tr.feat_v = pyramid(sv);
  tr.feat_t = pyramid(st);
  for (std::size_t l = 0; l < 3; ++l) {
    tr.grad_v[l] = sobel_magnitude(tr.feat_v[l]);
    tr.grad_t[l] = sobel_magnitude(tr.feat_t[l]);
    tr.grad_ref[l] = reference_map(tr.grad_v[l], tr.grad_t[l]);
    tr.sim_v[l] = ssim_alignment(tr.grad_v[l], tr.grad_ref[l], cfg_.ssim_window, cfg_.ssim_k1,
                                 cfg_.ssim_k2);
    tr.sim_t[l] = ssim_alignment(tr.grad_t[l], tr.grad_ref[l], cfg_.ssim_window, cfg_.ssim_k1,
                                 cfg_.ssim_k2);
    tr.gate_v[l] = sigmoid(tr.sim_v[l]);
    tr.gate_t[l] = sigmoid(tr.sim_t[l]);
    tr.fused[l] = fuse_level(tr.feat_v[l], tr.feat_t[l], tr.sim_v[l], tr.sim_t[l]);
    tr.pyramid.levels[l] = project(static_cast<int>(l), tr.fused[l]);
  }
  return tr;
}

void StructureEncoder::collect(ParamSet& ps, ParamLabel label, int stage) const {
  ps.add("encoder.stem1.w", stem1_w_, label, stage);
  ps.add("encoder.stem1.b", stem1_b_, label, stage);
  ps.add("encoder.stem2.w", stem2_w_, label, stage);
  ps.add("encoder.stem2.b", stem2_b_, label, stage);
  for (int l = 0; l < 3; ++l) {
    const std::string p = "encoder.level" + std::to_string(l + 1) + ".";
    ps.add(p + "conv.w", pyr_w_[static_cast<std::size_t>(l)], label, stage);
    ps.add(p + "conv.b", pyr_b_[static_cast<std::size_t>(l)], label, stage);
    ps.add(p + "proj.w", proj_w_[static_cast<std::size_t>(l)], label, stage);
    ps.add(p + "proj.b", proj_b_[static_cast<std::size_t>(l)], label, stage);
  }
}

}  // namespace slg
