#pragma once

#include <array>
#include <cstdint>

#include "slg/params.hpp"
#include "slg/tensor.hpp"

namespace slg {

struct StructureEncoderConfig {
  int stem_channels = 16;
  int pyramid_channels = 32;
  int out_width = 192;  // ViT token dimension D
  int ssim_window = 7;
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
};

// Fused structural features at 1/8, 1/16, 1/32 of the input, projected to the
// backbone width.
struct StructuralPyramid {
  std::array<Tensor, 3> levels;
};

// Per-level intermediates, kept around for tests and the demo-structure CLI.
struct EncoderTrace {
  Tensor stem_v, stem_t;
  std::array<Tensor, 3> feat_v, feat_t;
  std::array<Tensor, 3> grad_v, grad_t, grad_ref;
  std::array<Tensor, 3> sim_v, sim_t;      // raw M' maps, in [-1, 1]
  std::array<Tensor, 3> gate_v, gate_t;    // sigmoid(M'), in (0, 1)
  std::array<Tensor, 3> fused;             // pre-projection
  StructuralPyramid pyramid;               // projected to out_width
};

// Fixed 3x3 Sobel magnitude with border replication, per channel then averaged
// to a single map: [N,C,h,w] -> [N,1,h,w].
Tensor sobel_magnitude(const Tensor& feat);

// Element-wise maximum of the two gradient maps.
Tensor reference_map(const Tensor& grad_a, const Tensor& grad_b);

// Windowed SSIM of a gradient map against the reference. Uniform window with
// border replication; L is the dynamic range of the reference over the batch.
Tensor ssim_alignment(const Tensor& grad_m, const Tensor& grad_ref, int window, double k1,
                      double k2);

// F_f = sigmoid(M'_v) * F_v + sigmoid(M'_t) * F_t; the two gates are
// intentionally independent and do not sum to one.
Tensor fuse_level(const Tensor& feat_v, const Tensor& feat_t, const Tensor& sim_v,
                  const Tensor& sim_t);

class StructureEncoder {
 public:
  static StructureEncoder init(const StructureEncoderConfig& cfg, std::uint64_t seed);

  const StructureEncoderConfig& config() const { return cfg_; }

  // Shared stem applied to each modality; the IR channel is replicated to 3
  // so the weights really are shared. Output at 1/4 resolution.
  std::pair<Tensor, Tensor> stem(const Tensor& visible, const Tensor& thermal) const;

  // Three strided convolutions (k = 3, 5, 7) from the 1/4 stem output down to
  // 1/8, 1/16, 1/32.
  std::array<Tensor, 3> pyramid(const Tensor& stem_out) const;

  Tensor project(int level, const Tensor& fused) const;  // 1x1 conv to out_width

  EncoderTrace forward(const Tensor& visible, const Tensor& thermal) const;

  void collect(ParamSet& ps, ParamLabel label, int stage) const;

 private:
  StructureEncoderConfig cfg_;
  Tensor stem1_w_, stem1_b_;
  Tensor stem2_w_, stem2_b_;
  std::array<Tensor, 3> pyr_w_, pyr_b_;
  std::array<Tensor, 3> proj_w_, proj_b_;
};

}  // namespace slg
