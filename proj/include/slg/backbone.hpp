#pragma once

#include <cstdint>
#include <vector>

#include "slg/params.hpp"
#include "slg/tensor.hpp"

namespace slg {

struct BackboneConfig {
  int image_size = 64;
  int patch_size = 8;
  int depth = 6;
  int width = 192;
  int heads = 4;
  int in_channels = 4;  // RGB + IR, concatenated at the pixel level

  int grid() const { return image_size / patch_size; }
  int tokens() const { return grid() * grid(); }
  void validate() const;
};

// Patch tokens plus their 2D layout. Every token carries a recoverable
// normalized reference coordinate, see reference_points().
struct TokenGrid {
  Tensor tokens;  // [N, T, D]
  int grid_h = 0;
  int grid_w = 0;
};

// Normalized (x, y) center of every token, row-major: [T, 2] constants.
Tensor reference_points(int grid_h, int grid_w);

// Toy pre-norm ViT. Parameters are initialized deterministically from a seed
// and by convention never updated outside full-tuning mode; freezing itself is
// enforced by the optimizer via the parameter partition.
class Backbone {
 public:
  static Backbone init(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }

  TokenGrid patch_embed(const Tensor& image) const;  // [N,4,H,W] -> [N,T,D]
  Tensor run_block(int i, const Tensor& tokens) const;
  Tensor final_norm(const Tensor& tokens) const;

  // The attention matrix block i would use on these tokens: [N, heads, T, T].
  Tensor attention_weights(int i, const Tensor& tokens) const;

  // Closed-form parameter count for the given config, independent of init.
  static long long expected_param_count(const BackboneConfig& cfg);
  long long param_count() const;

  void collect(ParamSet& ps, ParamLabel label, ParamLabel patch_embed_label) const;

 private:
  struct Block {
    Tensor ln1_g, ln1_b;
    Tensor wqkv, bqkv;  // [D, 3D], [3D]
    Tensor wo, bo;      // [D, D], [D]
    Tensor ln2_g, ln2_b;
    Tensor w1, b1;  // [D, 4D], [4D]
    Tensor w2, b2;  // [4D, D], [D]
  };

  BackboneConfig cfg_;
  Tensor patch_w_;  // [in*p*p, D]
  Tensor patch_b_;  // [D]
  Tensor pos_;      // [T, D]
  std::vector<Block> blocks_;
  Tensor lnf_g_, lnf_b_;
};

}  // namespace slg
