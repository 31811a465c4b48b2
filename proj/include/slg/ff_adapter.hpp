#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "slg/params.hpp"
#include "slg/structure_encoder.hpp"
#include "slg/tensor.hpp"

namespace slg {

// How predicted offsets are interpreted. Pixel units add the raw offset after
// the coordinate mapping, the literal reading of the attention formula;
// normalized units scale the offset into [0,1] space before mapping.
enum class OffsetUnits { Pixel, Normalized };

struct FfAdapterConfig {
  int width = 192;   // token dimension D
  int depth = 6;     // one attention parameter set per backbone stage
  int k_points = 4;  // sampling points per pyramid level
  OffsetUnits units = OffsetUnits::Pixel;
};

// Spatial extents of the three pyramid levels for a square input image. Each
// strided convolution in the encoder maps H -> ceil(H/2).
std::array<int, 3> pyramid_extents(int image_size);

// Maps a normalized coordinate onto the pixel grid of a level under the
// pixel-center convention: x_px = x * w - 0.5.
std::pair<real, real> phi_map(real x, real y, int level_w, int level_h);

class FfAdapter {
 public:
  static FfAdapter init(const FfAdapterConfig& cfg, const std::array<int, 3>& level_extents,
                        std::uint64_t seed);

  const FfAdapterConfig& config() const { return cfg_; }

  // One query per token: 3K offsets and 3K jointly-normalized weights are
  // predicted from the token, each level is sampled bilinearly at the offset
  // reference location, and the weighted sum is passed through W_v.
  Tensor sparse_attend(int stage, const Tensor& tokens, const StructuralPyramid& pyramid,
                       const Tensor& ref_points) const;

  // tokens + gate * sparse_attend(tokens); exact identity while the gate is 0.
  Tensor inject(int stage, const Tensor& tokens, const StructuralPyramid& pyramid,
                const Tensor& ref_points) const;

  // Stage-i residual MLP applied token-wise to all three levels; valid for
  // 1 <= stage < depth.
  StructuralPyramid evolve(int stage, const StructuralPyramid& pyramid) const;

  void collect(ParamSet& ps, ParamLabel label) const;

 private:
  struct StageParams {
    Tensor w_off, b_off;  // [D, 3K*2], [3K*2], zero-initialized
    Tensor w_wt, b_wt;    // [D, 3K], [3K], zero-initialized (uniform weights)
    Tensor w_v;           // [D, D]
    Tensor gate;          // [1], zero-initialized output gate
    std::array<Tensor, 3> level_scale;  // normalized-units mode only
  };
  struct EvolverParams {
    Tensor w1, b1;  // [D, D/2]
    Tensor w2, b2;  // [D/2, D], zero-initialized so evolve starts as identity
  };

  FfAdapterConfig cfg_;
  std::array<int, 3> extents_{};
  std::vector<StageParams> stages_;
  std::vector<EvolverParams> evolvers_;  // indexed by stage-1
};

}  // namespace slg
