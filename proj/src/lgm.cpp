#include "slg/lgm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "slg/rng.hpp"

namespace slg {

Tensor ToyTextEmbedder::embed_slot(const std::string& text, const std::string& /*slot*/,
                                   const std::string& /*sample_id*/) const {
  std::vector<real> mat(static_cast<std::size_t>(tokens_) * dim_, real(0));
  std::istringstream words(text);
  std::string word;
  int row = 0;
  while (row < tokens_ && (words >> word)) {
    // position folded into the seed: "dark night" != "night dark"
    const std::uint64_t h =
        hash_combine(hash_combine(hash64(word), static_cast<std::uint64_t>(row) + 1), seed_);
    Rng rng(h);
    real norm2 = 0;
    real* r = mat.data() + static_cast<std::size_t>(row) * dim_;
    for (int j = 0; j < dim_; ++j) {
      r[j] = static_cast<real>(rng.normal());
      norm2 += r[j] * r[j];
    }
    const real inv = real(1) / std::sqrt(std::max(norm2, real(1e-30)));
    for (int j = 0; j < dim_; ++j) r[j] *= inv;
    ++row;
  }
  return Tensor::from_data({tokens_, dim_}, std::move(mat));
}

FileTextEmbedder FileTextEmbedder::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open caption-embedding file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw IoError("caption-embedding file " + path + ": " + e.what());
  }
  FileTextEmbedder emb;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& sample_id = it.key();
    if (!it.value().is_object()) throw IoError("sample " + sample_id + ": expected slot object");
    for (auto slot_it = it.value().begin(); slot_it != it.value().end(); ++slot_it) {
      const auto& rows = slot_it.value();
      if (!rows.is_array() || rows.empty()) {
        throw IoError("sample " + sample_id + " slot " + slot_it.key() + ": expected L x d array");
      }
      const int L = static_cast<int>(rows.size());
      const int d = static_cast<int>(rows[0].size());
      if (emb.tokens_ == 0) {
        emb.tokens_ = L;
        emb.dim_ = d;
      } else if (emb.tokens_ != L || emb.dim_ != d) {
        throw IoError("sample " + sample_id + " slot " + slot_it.key() + ": inconsistent shape");
      }
      std::vector<real> mat;
      mat.reserve(static_cast<std::size_t>(L) * d);
      for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != d) {
          throw IoError("sample " + sample_id + " slot " + slot_it.key() + ": ragged row");
        }
        for (const auto& v : row) mat.push_back(v.get<real>());
      }
      emb.table_[sample_id][slot_it.key()] = Tensor::from_data({L, d}, std::move(mat));
    }
  }
  if (emb.tokens_ == 0) throw IoError("caption-embedding file " + path + " is empty");
  return emb;
}

Tensor FileTextEmbedder::embed_slot(const std::string& /*text*/, const std::string& slot,
                                    const std::string& sample_id) const {
  auto sample_it = table_.find(sample_id);
  if (sample_it == table_.end()) throw IoError("no caption embeddings for sample " + sample_id);
  auto slot_it = sample_it->second.find(slot);
  if (slot_it == sample_it->second.end()) {
    throw IoError("sample " + sample_id + ": missing slot " + slot);
  }
  return slot_it->second;
}

SlotEmbeddings embed_caption(const StructuredCaption& c, const TextEmbedder& embedder,
                             const std::string& sample_id) {
  SlotEmbeddings out;
  out.env = embedder.embed_slot(c.env, "env", sample_id);
  out.type = embedder.embed_slot(c.type, "type", sample_id);
  out.obj = embedder.embed_slot(c.obj, "obj", sample_id);
  out.therm = embedder.embed_slot(c.therm, "therm", sample_id);
  return out;
}

std::vector<StructuredCaption> load_caption_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open caption file: " + path);
  std::vector<StructuredCaption> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    StructuredCaption c;
    for (const char* slot : {"env", "type", "obj", "therm"}) {
      if (!j.contains(slot)) {
        throw IoError(path + ":" + std::to_string(line_no) + ": missing slot '" + slot + "'");
      }
    }
    c.env = j.at("env").get<std::string>();
    c.type = j.at("type").get<std::string>();
    c.obj = j.at("obj").get<std::string>();
    c.therm = j.at("therm").get<std::string>();
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

Tensor xavier(Rng& rng, int fan_in, int fan_out) {
  const real s = std::sqrt(real(2) / static_cast<real>(fan_in + fan_out));
  std::vector<real> w(static_cast<std::size_t>(fan_in) * fan_out);
  for (auto& x : w) x = static_cast<real>(rng.normal()) * s;
  return Tensor::from_data({fan_in, fan_out}, std::move(w));
}

}  // namespace

Lgm Lgm::init(const LgmConfig& cfg, std::uint64_t seed) {
  if (cfg.tokens < 1 || cfg.embed_dim < 1 || cfg.out_width < 1) {
    throw ConfigError("lgm: invalid config");
  }
  Lgm lgm;
  lgm.cfg_ = cfg;
  Rng rng(seed);
  const int d = cfg.embed_dim;
  const int C = cfg.out_width;
  lgm.fuse_w1_ = xavier(rng, 4 * d, 2 * d);
  lgm.fuse_b1_ = Tensor::zeros({2 * d});
  lgm.fuse_w2_ = xavier(rng, 2 * d, d);
  lgm.fuse_b2_ = Tensor::zeros({d});
  lgm.g_w1_ = xavier(rng, d, d);
  lgm.g_b1_ = Tensor::zeros({d});
  lgm.g_w2_ = Tensor::zeros({d, C});  // gamma = 0 at step 0
  lgm.g_b2_ = Tensor::zeros({C});
  lgm.b_w1_ = xavier(rng, d, d);
  lgm.b_b1_ = Tensor::zeros({d});
  lgm.b_w2_ = Tensor::zeros({d, C});  // beta = 0 at step 0
  lgm.b_b2_ = Tensor::zeros({C});
  return lgm;
}

Tensor Lgm::fuse_slots(const SlotEmbeddings& slots) const {
  const int L = cfg_.tokens;
  const int d = cfg_.embed_dim;
  for (const Tensor* t : {&slots.env, &slots.type, &slots.obj, &slots.therm}) {
    if (t->rank() != 2 || t->dim(0) != L || t->dim(1) != d) {
      throw ShapeError("fuse_slots: slot embedding must be [" + std::to_string(L) + "," +
                       std::to_string(d) + "], got " + shape_str(t->shape()));
    }
  }
  Tensor cat = concat({slots.env, slots.type, slots.obj, slots.therm}, 1);  // [L, 4d]
  Tensor hidden = gelu(add(matmul(cat, fuse_w1_), fuse_b1_));
  return add(matmul(hidden, fuse_w2_), fuse_b2_);  // [L, d]
}

ModulationParams Lgm::heads(const Tensor& fused) const {
  Tensor batched = fused.rank() == 2 ? reshape(fused, {1, fused.dim(0), fused.dim(1)}) : fused;
  if (batched.rank() != 3 || batched.dim(2) != cfg_.embed_dim) {
    throw ShapeError("heads: expected [N,L,d] or [L,d]");
  }
  Tensor pooled = mean(batched, 1);  // [N, d]
  ModulationParams m;
  m.gamma = add(matmul(gelu(add(matmul(pooled, g_w1_), g_b1_)), g_w2_), g_b2_);
  m.beta = add(matmul(gelu(add(matmul(pooled, b_w1_), b_b1_)), b_w2_), b_b2_);
  return m;
}

Tensor Lgm::modulate(const Tensor& feat, const ModulationParams& m) {
  if (feat.rank() != 4) throw ShapeError("modulate: expected [N,C,h,w]");
  const int N = feat.dim(0), C = feat.dim(1);
  if (m.gamma.dim(0) != N || m.gamma.dim(1) != C || m.beta.dim(0) != N || m.beta.dim(1) != C) {
    throw ShapeError("modulate: gamma/beta must be [N,C] matching the feature map");
  }
  Tensor scale = reshape(add_scalar(m.gamma, real(1)), {N, C, 1, 1});
  Tensor shift = reshape(m.beta, {N, C, 1, 1});
  return add(mul(feat, scale), shift);
}

void Lgm::collect(ParamSet& ps, ParamLabel label, int stage) const {
  ps.add("lgm.fuse.w1", fuse_w1_, label, stage);
  ps.add("lgm.fuse.b1", fuse_b1_, label, stage);
  ps.add("lgm.fuse.w2", fuse_w2_, label, stage);
  ps.add("lgm.fuse.b2", fuse_b2_, label, stage);
  ps.add("lgm.gamma.w1", g_w1_, label, stage);
  ps.add("lgm.gamma.b1", g_b1_, label, stage);
  ps.add("lgm.gamma.w2", g_w2_, label, stage);
  ps.add("lgm.gamma.b2", g_b2_, label, stage);
  ps.add("lgm.beta.w1", b_w1_, label, stage);
  ps.add("lgm.beta.b1", b_b1_, label, stage);
  ps.add("lgm.beta.w2", b_w2_, label, stage);
  ps.add("lgm.beta.b2", b_b2_, label, stage);
}

}  // namespace slg
