#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "slg/errors.hpp"
#include "slg/real.hpp"

namespace slg {

using Shape = std::vector<int>;

long long numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One value in the computation graph. Ops allocate a fresh Node per result;
// leaves (parameters, inputs) are Nodes without parents. grad is allocated
// lazily during backward and accumulates additively across uses.
struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;
  bool requires_grad = false;
  long long seq = -1;  // record position on the active tape, -1 for leaves
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;
  const char* op = "leaf";
};

// Cheap shared handle onto a Node. Treated as an immutable value once an op
// has consumed it; raw_data() is for leaf mutation between passes (optimizer,
// initialization) only.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<real> data, bool requires_grad = false);
  static Tensor scalar(real v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const;
  long long size() const { return static_cast<long long>(node_->value.size()); }
  const std::vector<real>& data() const { return node_->value; }
  std::vector<real>& raw_data();
  real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<real>& grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Define-by-run tape, one per thread, rebuilt every forward pass. Nodes are
// recorded in construction order; backward walks them exactly once in reverse.
class Tape {
 public:
  static Tape& active();

  void record(const std::shared_ptr<Node>& node);
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
};

void backward(const Tensor& loss);

// Suppresses tape recording within a scope; forwards under the guard produce
// plain value nodes (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool grad_enabled();

 private:
  bool prev_;
};

// ---- elementwise (numpy-style right-aligned broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor max_elementwise(const Tensor& a, const Tensor& b);  // ties route grad to a

Tensor add_scalar(const Tensor& a, real c);
Tensor mul_scalar(const Tensor& a, real c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
Tensor variance(const Tensor& a, int axis, bool keepdim = false);  // population
Tensor reduce_max(const Tensor& a);  // -> [1], subgradient to first argmax
Tensor reduce_min(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor select(const Tensor& a, int axis, int index);  // drops the axis
Tensor detach(const Tensor& a);

// ---- dense kernels ----
// A: [..., m, k]; B: [k, n] (shared) or [..., k, n] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// input [N,C,H,W], kernel [Co,C,k,k] with k odd, zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

// border-replication padding, [N,C,H,W] -> [N,C,H+2p,W+2p]
Tensor pad2d_replicate(const Tensor& input, int pad);

// [N,C,H,W] -> [N, T, C*p*p] with T = (H/p)*(W/p), rows ordered row-major over
// the patch grid, features ordered (c, py, px).
Tensor unfold_patches(const Tensor& image, int patch);

// map [C,H,W] + points [P,2] -> [P,C], or batched [N,C,H,W] + [N,P,2] -> [N,P,C].
// Points are pixel coordinates (x, y); out-of-range coordinates clamp to the
// border (replication). Differentiable in both the map and the points.
Tensor bilinear_sample_px(const Tensor& map, const Tensor& points);

// Same, with points normalized to [0,1]^2 under the pixel-center convention
// (x_px = x*W - 0.5).
Tensor bilinear_sample(const Tensor& map, const Tensor& points01);

// Normalization over the last axis; gain/bias have shape [D].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps = 1e-12);

}  // namespace slg
