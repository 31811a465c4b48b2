#include "slg/ff_adapter.hpp"

#include <cmath>

#include "slg/rng.hpp"

namespace slg {

std::array<int, 3> pyramid_extents(int image_size) {
  auto halve = [](int h) { return (h + 1) / 2; };
  const int stem = halve(halve(image_size));
  std::array<int, 3> out{};
  out[0] = halve(stem);
  out[1] = halve(out[0]);
  out[2] = halve(out[1]);
  return out;
}

std::pair<real, real> phi_map(real x, real y, int level_w, int level_h) {
  return {x * static_cast<real>(level_w) - real(0.5), y * static_cast<real>(level_h) - real(0.5)};
}

namespace {

Tensor xavier(Rng& rng, int fan_in, int fan_out) {
  const real s = std::sqrt(real(2) / static_cast<real>(fan_in + fan_out));
  std::vector<real> w(static_cast<std::size_t>(fan_in) * fan_out);
  for (auto& x : w) x = static_cast<real>(rng.normal()) * s;
  return Tensor::from_data({fan_in, fan_out}, std::move(w));
}

}  // namespace

FfAdapter FfAdapter::init(const FfAdapterConfig& cfg, const std::array<int, 3>& level_extents,
                          std::uint64_t seed) {
  if (cfg.width < 1 || cfg.depth < 1 || cfg.k_points < 1) {
    throw ConfigError("ff_adapter: invalid config");
  }
  FfAdapter ad;
  ad.cfg_ = cfg;
  ad.extents_ = level_extents;
  Rng rng(seed);
  const int D = cfg.width;
  const int K = cfg.k_points;
  ad.stages_.resize(static_cast<std::size_t>(cfg.depth));
  for (auto& st : ad.stages_) {
    st.w_off = Tensor::zeros({D, 3 * K * 2});
    st.b_off = Tensor::zeros({3 * K * 2});
    st.w_wt = Tensor::zeros({D, 3 * K});
    st.b_wt = Tensor::zeros({3 * K});
    st.w_v = xavier(rng, D, D);
    st.gate = Tensor::zeros({1});
    for (int l = 0; l < 3; ++l) {
      st.level_scale[static_cast<std::size_t>(l)] =
          Tensor::full({1}, real(2) / static_cast<real>(level_extents[static_cast<std::size_t>(l)]));
    }
  }
  const int hidden = std::max(1, D / 2);
  ad.evolvers_.resize(static_cast<std::size_t>(cfg.depth > 1 ? cfg.depth - 1 : 0));
  for (auto& ev : ad.evolvers_) {
    ev.w1 = xavier(rng, D, hidden);
    ev.b1 = Tensor::zeros({hidden});
    ev.w2 = Tensor::zeros({hidden, D});
    ev.b2 = Tensor::zeros({D});
  }
  return ad;
}

Tensor FfAdapter::sparse_attend(int stage, const Tensor& tokens, const StructuralPyramid& pyramid,
                                const Tensor& ref_points) const {
  if (stage < 0 || stage >= cfg_.depth) throw ShapeError("sparse_attend: stage out of range");
  const StageParams& st = stages_[static_cast<std::size_t>(stage)];
  const int N = tokens.dim(0);
  const int T = tokens.dim(1);
  const int D = cfg_.width;
  const int K = cfg_.k_points;
  if (tokens.dim(2) != D) throw ShapeError("sparse_attend: token width mismatch");
  for (const auto& lvl : pyramid.levels) {
    if (lvl.dim(1) != D) throw ShapeError("sparse_attend: pyramid level not projected to D");
  }

  Tensor offsets = reshape(add(matmul(tokens, st.w_off), st.b_off), {N, T, 3, K, 2});
  Tensor weights = reshape(softmax(add(matmul(tokens, st.w_wt), st.b_wt), 2), {N, T, 3, K, 1});

  std::vector<Tensor> sampled;
  sampled.reserve(3);
  for (int l = 0; l < 3; ++l) {
    const Tensor& level = pyramid.levels[static_cast<std::size_t>(l)];
    const int lh = level.dim(2);
    const int lw = level.dim(3);
    Tensor off_l = select(offsets, 2, l);  // [N,T,K,2]
    Tensor scale_px = Tensor::from_data({2}, {static_cast<real>(lw), static_cast<real>(lh)});
    Tensor ref = reshape(ref_points, {T, 1, 2});  // broadcasts over N and K
    Tensor pts_px;
    if (cfg_.units == OffsetUnits::Pixel) {
      // phi_l(p_q) + delta, offsets in pixels of the level grid
      Tensor base = add_scalar(mul(ref, scale_px), real(-0.5));
      pts_px = add(base, off_l);
    } else {
      // phi_l(p_q + delta * s_l), offsets in normalized units
      Tensor shifted = add(ref, mul(off_l, st.level_scale[static_cast<std::size_t>(l)]));
      pts_px = add_scalar(mul(shifted, scale_px), real(-0.5));
    }
    Tensor samples = bilinear_sample_px(level, reshape(pts_px, {N, T * K, 2}));  // [N,T*K,D]
    sampled.push_back(reshape(samples, {N, T, 1, K, D}));
  }
  Tensor stacked = concat(sampled, 2);                       // [N,T,3,K,D]
  Tensor weighted = mul(stacked, weights);                   // broadcast over D
  Tensor pooled = sum(sum(weighted, 3), 2);                  // [N,T,D]
  return matmul(pooled, st.w_v);
}

Tensor FfAdapter::inject(int stage, const Tensor& tokens, const StructuralPyramid& pyramid,
                         const Tensor& ref_points) const {
  Tensor attn = sparse_attend(stage, tokens, pyramid, ref_points);
  const StageParams& st = stages_[static_cast<std::size_t>(stage)];
  return add(tokens, mul(attn, st.gate));
}

StructuralPyramid FfAdapter::evolve(int stage, const StructuralPyramid& pyramid) const {
  if (stage < 1 || stage >= cfg_.depth) throw ShapeError("evolve: stage must be in [1, depth)");
  const EvolverParams& ev = evolvers_[static_cast<std::size_t>(stage - 1)];
  StructuralPyramid out;
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor& lvl = pyramid.levels[l];
    const int N = lvl.dim(0), D = lvl.dim(1), h = lvl.dim(2), w = lvl.dim(3);
    Tensor tok = reshape(permute(lvl, {0, 2, 3, 1}), {N, h * w, D});
    Tensor up = add(matmul(gelu(add(matmul(tok, ev.w1), ev.b1)), ev.w2), ev.b2);
    Tensor res = add(tok, up);
    out.levels[l] = permute(reshape(res, {N, h, w, D}), {0, 3, 1, 2});
  }
  return out;
}

void FfAdapter::collect(ParamSet& ps, ParamLabel label) const {
  for (int i = 0; i < cfg_.depth; ++i) {
    const StageParams& st = stages_[static_cast<std::size_t>(i)];
    const std::string p = "ff.stage" + std::to_string(i) + ".";
    ps.add(p + "off.w", st.w_off, label, i);
    ps.add(p + "off.b", st.b_off, label, i);
    ps.add(p + "wt.w", st.w_wt, label, i);
    ps.add(p + "wt.b", st.b_wt, label, i);
    ps.add(p + "wv", st.w_v, label, i);
    ps.add(p + "gate", st.gate, label, i);
    if (cfg_.units == OffsetUnits::Normalized) {
      for (int l = 0; l < 3; ++l) {
        ps.add(p + "scale" + std::to_string(l + 1), st.level_scale[static_cast<std::size_t>(l)],
               label, i);
      }
    }
  }
  for (std::size_t i = 0; i < evolvers_.size(); ++i) {
    const EvolverParams& ev = evolvers_[i];
    const std::string p = "ff.evolve" + std::to_string(i + 1) + ".";
    const int stage = static_cast<int>(i + 1);
    ps.add(p + "w1", ev.w1, label, stage);
    ps.add(p + "b1", ev.b1, label, stage);
    ps.add(p + "w2", ev.w2, label, stage);
    ps.add(p + "b2", ev.b2, label, stage);
  }
}

}  // namespace slg
