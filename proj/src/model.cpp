#include "slg/model.hpp"

#include <cmath>

#include "slg/rng.hpp"

namespace slg {

namespace {

// Embedder seed is a fixed constant: the text encoder stands in for a frozen
// pretrained model shared by every run.
constexpr std::uint64_t kEmbedderSeed = 4242;

}  // namespace

Batch make_batch(const std::vector<SyntheticSample>& samples, const std::vector<int>& indices,
                 const std::vector<StructuredCaption>* caption_override) {
  if (indices.empty()) throw ShapeError("make_batch: empty batch");
  Batch b;
  std::vector<Tensor> vis, thm, tgt;
  vis.reserve(indices.size());
  for (int idx : indices) {
    const SyntheticSample& s = samples[static_cast<std::size_t>(idx)];
    const int S = s.visible.dim(1);
    vis.push_back(reshape(s.visible, {1, 3, S, S}));
    thm.push_back(reshape(s.thermal, {1, 1, S, S}));
    tgt.push_back(Tensor::from_data({1, static_cast<int>(s.heatmap.size())}, s.heatmap));
    b.captions.push_back(caption_override ? (*caption_override)[static_cast<std::size_t>(idx)]
                                          : s.caption);
    b.ids.push_back(std::to_string(s.id));
  }
  b.visible = vis.size() == 1 ? vis[0] : concat(vis, 0);
  b.thermal = thm.size() == 1 ? thm[0] : concat(thm, 0);
  b.target = tgt.size() == 1 ? tgt[0] : concat(tgt, 0);
  b.image = concat({b.visible, b.thermal}, 1);
  return b;
}

SlgModel SlgModel::build(const RunConfig& cfg, std::uint64_t adapter_seed) {
  SlgModel m;
  m.cfg_ = cfg;
  m.backbone_ = Backbone::init(cfg.backbone, cfg.backbone_seed);
  Rng rng(adapter_seed);

  const int D = cfg.backbone.width;
  const bool sa = cfg.mode != Mode::Baseline;
  const bool lgm = cfg.mode != Mode::Baseline && cfg.mode != Mode::Sa;

  if (sa) {
    StructureEncoderConfig ec;
    ec.stem_channels = cfg.stem_channels;
    ec.pyramid_channels = cfg.pyramid_channels;
    ec.out_width = D;
    m.encoder_ = StructureEncoder::init(ec, rng.fork(1).next_u64());

    FfAdapterConfig fc;
    fc.width = D;
    fc.depth = cfg.backbone.depth;
    fc.k_points = cfg.k_points;
    fc.units = cfg.offset_units;
    m.ff_ = FfAdapter::init(fc, pyramid_extents(cfg.backbone.image_size), rng.fork(2).next_u64());
  }
  if (lgm) {
    LgmConfig lc;
    lc.tokens = cfg.text_tokens;
    lc.embed_dim = cfg.text_dim;
    lc.out_width = D;
    m.lgm_ = Lgm::init(lc, rng.fork(3).next_u64());
  }
  m.embedder_ = std::make_shared<ToyTextEmbedder>(cfg.text_tokens, cfg.text_dim, kEmbedderSeed);

  {
    Rng hr = rng.fork(4);
    const real s = std::sqrt(real(2) / static_cast<real>(D + 1));
    std::vector<real> w(static_cast<std::size_t>(D));
    for (auto& x : w) x = static_cast<real>(hr.normal()) * s;
    m.head_w_ = Tensor::from_data({D, 1}, std::move(w));
    m.head_b_ = Tensor::zeros({1});
  }

  // Partition. Stage depths: stem/pyramid level 0, per-block adapters their
  // block index, heads and LGM the maximum depth. The incremental comparison
  // rows (baseline, +sa, +sa+lgm) keep the baseline's trainable patch
  // embedding; the deployed adapter mode freezes the backbone end to end.
  const int depth = cfg.backbone.depth;
  const bool full = cfg.mode == Mode::Full;
  const ParamLabel backbone_label = full ? ParamLabel::Adapter : ParamLabel::Frozen;
  const ParamLabel patch_label =
      cfg.mode == Mode::Adapter ? ParamLabel::Frozen : ParamLabel::Adapter;
  m.backbone_.collect(m.params_, backbone_label, patch_label);
  if (sa) {
    m.encoder_->collect(m.params_, ParamLabel::Adapter, 0);
    m.ff_->collect(m.params_, ParamLabel::Adapter);
  }
  if (lgm) m.lgm_->collect(m.params_, ParamLabel::Adapter, depth);
  m.params_.add("head.w", m.head_w_, ParamLabel::Adapter, depth);
  m.params_.add("head.b", m.head_b_, ParamLabel::Adapter, depth);

  for (auto& e : m.params_.entries()) {
    e.tensor.set_requires_grad(e.label == ParamLabel::Adapter);
  }
  return m;
}

Tensor SlgModel::forward(const Batch& batch) const {
  const int N = batch.image.dim(0);
  TokenGrid tg = backbone_.patch_embed(batch.image);
  Tensor ref = reference_points(tg.grid_h, tg.grid_w);
  Tensor tokens = tg.tokens;

  StructuralPyramid pyr;
  if (use_sa()) {
    pyr = encoder_->forward(batch.visible, batch.thermal).pyramid;
  }
  for (int i = 0; i < cfg_.backbone.depth; ++i) {
    if (use_sa()) {
      if (i >= 1) pyr = ff_->evolve(i, pyr);
      tokens = ff_->inject(i, tokens, pyr, ref);
    }
    tokens = backbone_.run_block(i, tokens);
  }
  tokens = backbone_.final_norm(tokens);

  const int D = cfg_.backbone.width;
  Tensor grid = permute(reshape(tokens, {N, tg.grid_h, tg.grid_w, D}), {0, 3, 1, 2});
  if (use_lgm()) {
    if (static_cast<int>(batch.captions.size()) != N) {
      throw ShapeError("forward: caption count does not match batch");
    }
    std::vector<Tensor> fused;
    fused.reserve(batch.captions.size());
    for (std::size_t i = 0; i < batch.captions.size(); ++i) {
      SlotEmbeddings slots = embed_caption(batch.captions[i], *embedder_, batch.ids[i]);
      fused.push_back(reshape(lgm_->fuse_slots(slots), {1, cfg_.text_tokens, cfg_.text_dim}));
    }
    Tensor sem = fused.size() == 1 ? fused[0] : concat(fused, 0);
    ModulationParams mp = lgm_->heads(sem);
    grid = Lgm::modulate(grid, mp);
  }
  Tensor flat = reshape(permute(grid, {0, 2, 3, 1}), {N, tg.grid_h * tg.grid_w, D});
  Tensor logits = add(matmul(flat, head_w_), head_b_);
  return reshape(logits, {N, tg.grid_h * tg.grid_w});
}

Tensor SlgModel::loss(const Tensor& logits, const Tensor& target) const {
  if (logits.shape() != target.shape()) throw ShapeError("loss: logits/target shape mismatch");
  constexpr real eps = 1e-12;
  Tensor p = sigmoid(logits);
  Tensor pos = mul(target, log(add_scalar(p, eps)));
  Tensor neg_term = mul(add_scalar(neg(target), 1), log(add_scalar(neg(p), real(1) + eps)));
  return neg(mean(add(pos, neg_term)));
}

void SlgModel::load_state(const std::map<std::string, std::vector<real>>& state) {
  for (auto& e : params_.entries()) {
    auto it = state.find(e.name);
    if (it == state.end()) throw IoError("checkpoint missing parameter " + e.name);
    if (it->second.size() != static_cast<std::size_t>(e.tensor.size())) {
      throw IoError("checkpoint parameter " + e.name + " has wrong size");
    }
    e.tensor.raw_data() = it->second;
  }
}

}  // namespace slg
