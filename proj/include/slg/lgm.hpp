#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "slg/params.hpp"
#include "slg/tensor.hpp"

namespace slg {

// Four text slots describing the scene; empty string encodes "unknown".
struct StructuredCaption {
  std::string env;
  std::string type;
  std::string obj;
  std::string therm;
};

struct LgmConfig {
  int tokens = 77;      // L
  int embed_dim = 64;   // d
  int out_width = 192;  // C, the backbone width
};

// Frozen text-encoder boundary. Implementations return an [L, d] matrix per
// slot; no gradients flow into an embedder.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual Tensor embed_slot(const std::string& text, const std::string& slot,
                            const std::string& sample_id) const = 0;
  virtual int tokens() const = 0;
  virtual int embed_dim() const = 0;
};

// Deterministic stand-in for a real text encoder: each whitespace token is
// hashed (with its position folded into the seed) to a unit-norm d-vector.
// Rows past the token count are zero; the empty string embeds to all zeros.
class ToyTextEmbedder : public TextEmbedder {
 public:
  ToyTextEmbedder(int tokens, int embed_dim, std::uint64_t seed)
      : tokens_(tokens), dim_(embed_dim), seed_(seed) {}

  Tensor embed_slot(const std::string& text, const std::string& slot,
                    const std::string& sample_id) const override;
  int tokens() const override { return tokens_; }
  int embed_dim() const override { return dim_; }

 private:
  int tokens_;
  int dim_;
  std::uint64_t seed_;
};

// Loads precomputed L x d matrices from a JSON document keyed by sample id and
// slot name. A missing key is a load error.
class FileTextEmbedder : public TextEmbedder {
 public:
  static FileTextEmbedder load(const std::string& path);

  Tensor embed_slot(const std::string& text, const std::string& slot,
                    const std::string& sample_id) const override;
  int tokens() const override { return tokens_; }
  int embed_dim() const override { return dim_; }

 private:
  int tokens_ = 0;
  int dim_ = 0;
  std::map<std::string, std::map<std::string, Tensor>> table_;
};

struct SlotEmbeddings {
  Tensor env, type, obj, therm;  // each [L, d], frozen
};

SlotEmbeddings embed_caption(const StructuredCaption& c, const TextEmbedder& embedder,
                             const std::string& sample_id = "");

// Caption text file: JSON lines, one object per sample with the four string
// slots ("env", "type", "obj", "therm").
std::vector<StructuredCaption> load_caption_jsonl(const std::string& path);

struct ModulationParams {
  Tensor gamma;  // [N, C]
  Tensor beta;   // [N, C]
};

class Lgm {
 public:
  static Lgm init(const LgmConfig& cfg, std::uint64_t seed);

  const LgmConfig& config() const { return cfg_; }

  // Concat the four slot matrices to [L, 4d] and project back to [L, d] with a
  // token-wise two-layer MLP.
  Tensor fuse_slots(const SlotEmbeddings& slots) const;

  // Mean-pool over tokens, then two parallel zero-initialized heads produce
  // gamma and beta of width C. Accepts [L, d] or batched [N, L, d].
  ModulationParams heads(const Tensor& fused) const;

  // F_guided = (gamma + 1) * F + beta, channel-wise over [N, C, h, w].
  static Tensor modulate(const Tensor& feat, const ModulationParams& m);

  void collect(ParamSet& ps, ParamLabel label, int stage) const;

 private:
  LgmConfig cfg_;
  Tensor fuse_w1_, fuse_b1_;  // [4d, 2d]
  Tensor fuse_w2_, fuse_b2_;  // [2d, d]
  Tensor g_w1_, g_b1_, g_w2_, g_b2_;  // gamma head: d -> d -> C, final layer zero
  Tensor b_w1_, b_b1_, b_w2_, b_b2_;  // beta head
};

}  // namespace slg
