#include "slg/backbone.hpp"

#include <cmath>

#include "slg/rng.hpp"

namespace slg {

void BackboneConfig::validate() const {
  if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0) {
    throw ConfigError("backbone: image_size must be a positive multiple of patch_size");
  }
  if (depth < 1) throw ConfigError("backbone: depth must be >= 1");
  if (width < 1 || heads < 1 || width % heads != 0) {
    throw ConfigError("backbone: width must be a positive multiple of heads");
  }
  if (in_channels != 4) throw ConfigError("backbone: expects 4 input channels (RGB+IR)");
}

Tensor reference_points(int grid_h, int grid_w) {
  std::vector<real> pts(static_cast<std::size_t>(grid_h) * grid_w * 2);
  std::size_t i = 0;
  for (int row = 0; row < grid_h; ++row) {
    for (int col = 0; col < grid_w; ++col) {
      pts[i++] = (static_cast<real>(col) + real(0.5)) / static_cast<real>(grid_w);
      pts[i++] = (static_cast<real>(row) + real(0.5)) / static_cast<real>(grid_h);
    }
  }
  return Tensor::from_data({grid_h * grid_w, 2}, std::move(pts));
}

namespace {

Tensor init_linear_weight(Rng& rng, int fan_in, int fan_out) {
  const real s = std::sqrt(real(2) / static_cast<real>(fan_in + fan_out));
  std::vector<real> w(static_cast<std::size_t>(fan_in) * fan_out);
  for (auto& x : w) x = static_cast<real>(rng.normal()) * s;
  return Tensor::from_data({fan_in, fan_out}, std::move(w));
}

}  // namespace

Backbone Backbone::init(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Backbone bb;
  bb.cfg_ = cfg;
  Rng rng(seed);
  const int D = cfg.width;
  const int F = cfg.in_channels * cfg.patch_size * cfg.patch_size;
  const int T = cfg.tokens();

  bb.patch_w_ = init_linear_weight(rng, F, D);
  bb.patch_b_ = Tensor::zeros({D});
  {
    std::vector<real> pos(static_cast<std::size_t>(T) * D);
    for (auto& x : pos) x = static_cast<real>(rng.normal()) * real(0.02);
    bb.pos_ = Tensor::from_data({T, D}, std::move(pos));
  }
  bb.blocks_.resize(static_cast<std::size_t>(cfg.depth));
  for (auto& blk : bb.blocks_) {
    blk.ln1_g = Tensor::full({D}, 1);
    blk.ln1_b = Tensor::zeros({D});
    blk.wqkv = init_linear_weight(rng, D, 3 * D);
    blk.bqkv = Tensor::zeros({3 * D});
    blk.wo = init_linear_weight(rng, D, D);
    blk.bo = Tensor::zeros({D});
    blk.ln2_g = Tensor::full({D}, 1);
    blk.ln2_b = Tensor::zeros({D});
    blk.w1 = init_linear_weight(rng, D, 4 * D);
    blk.b1 = Tensor::zeros({4 * D});
    blk.w2 = init_linear_weight(rng, 4 * D, D);
    blk.b2 = Tensor::zeros({D});
  }
  bb.lnf_g_ = Tensor::full({D}, 1);
  bb.lnf_b_ = Tensor::zeros({D});
  return bb;
}

TokenGrid Backbone::patch_embed(const Tensor& image) const {
  if (image.rank() != 4 || image.dim(1) != cfg_.in_channels || image.dim(2) != cfg_.image_size ||
      image.dim(3) != cfg_.image_size) {
    throw ShapeError("patch_embed: expected [N," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                     "], got " + shape_str(image.shape()));
  }
  Tensor patches = unfold_patches(image, cfg_.patch_size);  // [N,T,F]
  Tensor projected = add(matmul(patches, patch_w_), patch_b_);
  TokenGrid grid;
  grid.tokens = add(projected, pos_);  // pos [T,D] broadcasts over the batch
  grid.grid_h = cfg_.grid();
  grid.grid_w = cfg_.grid();
  return grid;
}

namespace {

struct AttnParts {
  Tensor attn;  // [N,H,T,T]
  Tensor v;     // [N,H,T,dh]
};

AttnParts attention_parts(const Tensor& normed, const Tensor& wqkv, const Tensor& bqkv, int heads) {
  const int N = normed.dim(0);
  const int T = normed.dim(1);
  const int D = normed.dim(2);
  const int dh = D / heads;
  Tensor qkv = add(matmul(normed, wqkv), bqkv);       // [N,T,3D]
  Tensor split = reshape(qkv, {N, T, 3, heads, dh});
  Tensor arranged = permute(split, {2, 0, 3, 1, 4});  // [3,N,H,T,dh]
  Tensor q = select(arranged, 0, 0);
  Tensor k = select(arranged, 0, 1);
  AttnParts parts;
  parts.v = select(arranged, 0, 2);
  Tensor kt = permute(k, {0, 1, 3, 2});               // [N,H,dh,T]
  Tensor scores = mul_scalar(matmul(q, kt), real(1) / std::sqrt(static_cast<real>(dh)));
  parts.attn = softmax(scores, 3);
  return parts;
}

}  // namespace

Tensor Backbone::run_block(int i, const Tensor& tokens) const {
  if (i < 0 || i >= cfg_.depth) throw ShapeError("run_block: stage index out of range");
  const Block& blk = blocks_[static_cast<std::size_t>(i)];
  const int D = cfg_.width;
  const int N = tokens.dim(0);
  const int T = tokens.dim(1);

  Tensor h = layer_norm(tokens, blk.ln1_g, blk.ln1_b);
  AttnParts parts = attention_parts(h, blk.wqkv, blk.bqkv, cfg_.heads);
  Tensor mixed = matmul(parts.attn, parts.v);  // [N,H,T,dh]
  Tensor merged = reshape(permute(mixed, {0, 2, 1, 3}), {N, T, D});
  Tensor x = add(tokens, add(matmul(merged, blk.wo), blk.bo));

  Tensor h2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
  Tensor ff = add(matmul(gelu(add(matmul(h2, blk.w1), blk.b1)), blk.w2), blk.b2);
  return add(x, ff);
}

Tensor Backbone::attention_weights(int i, const Tensor& tokens) const {
  if (i < 0 || i >= cfg_.depth) throw ShapeError("attention_weights: stage index out of range");
  const Block& blk = blocks_[static_cast<std::size_t>(i)];
  Tensor h = layer_norm(tokens, blk.ln1_g, blk.ln1_b);
  return attention_parts(h, blk.wqkv, blk.bqkv, cfg_.heads).attn;
}

Tensor Backbone::final_norm(const Tensor& tokens) const {
  return layer_norm(tokens, lnf_g_, lnf_b_);
}

long long Backbone::expected_param_count(const BackboneConfig& cfg) {
  const long long D = cfg.width;
  const long long F = static_cast<long long>(cfg.in_channels) * cfg.patch_size * cfg.patch_size;
  const long long T = cfg.tokens();
  const long long embed = F * D + D + T * D;
  const long long per_block = (2 * D) + (D * 3 * D + 3 * D) + (D * D + D) + (2 * D) +
                              (D * 4 * D + 4 * D) + (4 * D * D + D);
  return embed + cfg.depth * per_block + 2 * D;
}

long long Backbone::param_count() const {
  long long n = patch_w_.size() + patch_b_.size() + pos_.size() + lnf_g_.size() + lnf_b_.size();
  for (const auto& blk : blocks_) {
    n += blk.ln1_g.size() + blk.ln1_b.size() + blk.wqkv.size() + blk.bqkv.size() + blk.wo.size() +
         blk.bo.size() + blk.ln2_g.size() + blk.ln2_b.size() + blk.w1.size() + blk.b1.size() +
         blk.w2.size() + blk.b2.size();
  }
  return n;
}

void Backbone::collect(ParamSet& ps, ParamLabel label, ParamLabel patch_embed_label) const {
  ps.add("backbone.patch.w", patch_w_, patch_embed_label, 0);
  ps.add("backbone.patch.b", patch_b_, patch_embed_label, 0);
  ps.add("backbone.pos", pos_, label, 0);
  for (int i = 0; i < cfg_.depth; ++i) {
    const Block& blk = blocks_[static_cast<std::size_t>(i)];
    const std::string p = "backbone.block" + std::to_string(i) + ".";
    ps.add(p + "ln1.g", blk.ln1_g, label, i);
    ps.add(p + "ln1.b", blk.ln1_b, label, i);
    ps.add(p + "wqkv", blk.wqkv, label, i);
    ps.add(p + "bqkv", blk.bqkv, label, i);
    ps.add(p + "wo", blk.wo, label, i);
    ps.add(p + "bo", blk.bo, label, i);
    ps.add(p + "ln2.g", blk.ln2_g, label, i);
    ps.add(p + "ln2.b", blk.ln2_b, label, i);
    ps.add(p + "w1", blk.w1, label, i);
    ps.add(p + "b1", blk.b1, label, i);
    ps.add(p + "w2", blk.w2, label, i);
    ps.add(p + "b2", blk.b2, label, i);
  }
  ps.add("backbone.lnf.g", lnf_g_, label, cfg_.depth);
  ps.add("backbone.lnf.b", lnf_b_, label, cfg_.depth);
}

}  // namespace slg
