#include "slg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <sstream>

namespace slg {

long long numel(const Shape& shape) {
  long long n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape_valid(const char* op, const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError(std::string(op) + ": non-positive extent in " + shape_str(shape));
  }
}

void check_finite(const char* op, const std::vector<real>& v) {
#ifdef SLG_REAL32
  for (real x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in result");
  }
#else
  // finite iff the exponent bits are not all ones; integer compare vectorizes
  constexpr std::uint64_t exp_mask = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (real x : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    bad |= static_cast<std::uint64_t>((bits & exp_mask) == exp_mask);
  }
  if (bad) throw NumericError(std::string(op) + ": non-finite value in result");
#endif
}

std::vector<long long> strides_of(const Shape& s) {
  std::vector<long long> st(s.size());
  long long acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

bool any_requires_grad(const std::vector<std::shared_ptr<Node>>& parents) {
  if (!grad_enabled_flag()) return false;
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

// Builds the result node, runs the finite check, and records it on the tape
// when any parent carries gradient. The caller attaches backprop afterwards.
std::shared_ptr<Node> make_node(const char* op, Shape shape, std::vector<real> value,
                                std::vector<std::shared_ptr<Node>> parents) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  check_finite(op, node->value);
  if (any_requires_grad(parents)) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    Tape::active().record(node);
  }
  return node;
}

void ensure_grad(Node& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), real(0));
}

// Broadcast plan: strides of each input aligned to the output rank, zero on
// broadcast axes.
struct BcastPlan {
  Shape out;
  std::vector<long long> sa, sb;
};

BcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int R = std::max(ra, rb);
  BcastPlan plan;
  plan.out.assign(static_cast<std::size_t>(R), 1);
  const auto sta = strides_of(a);
  const auto stb = strides_of(b);
  plan.sa.assign(static_cast<std::size_t>(R), 0);
  plan.sb.assign(static_cast<std::size_t>(R), 0);
  for (int i = 0; i < R; ++i) {
    const int ia = i - (R - ra);
    const int ib = i - (R - rb);
    const int da = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const int db = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
    }
    const int d = std::max(da, db);
    plan.out[static_cast<std::size_t>(i)] = d;
    if (ia >= 0 && da != 1) plan.sa[static_cast<std::size_t>(i)] = sta[static_cast<std::size_t>(ia)];
    if (ib >= 0 && db != 1) plan.sb[static_cast<std::size_t>(i)] = stb[static_cast<std::size_t>(ib)];
  }
  return plan;
}

// Walks the broadcast output space, calling fn(out_flat, off_a, off_b).
template <class Fn>
void bcast_walk(const BcastPlan& plan, Fn fn) {
  const int R = static_cast<int>(plan.out.size());
  const long long n = numel(plan.out);
  if (R == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<int> idx(static_cast<std::size_t>(R), 0);
  long long oa = 0, ob = 0;
  for (long long flat = 0; flat < n; ++flat) {
    fn(flat, oa, ob);
    for (int d = R - 1; d >= 0; --d) {
      const std::size_t ud = static_cast<std::size_t>(d);
      ++idx[ud];
      oa += plan.sa[ud];
      ob += plan.sb[ud];
      if (idx[ud] < plan.out[ud]) break;
      idx[ud] = 0;
      oa -= plan.sa[ud] * plan.out[ud];
      ob -= plan.sb[ud] * plan.out[ud];
    }
  }
}

// True when b's shape is a suffix of a's shape, the common bias/positional
// pattern: b then tiles contiguously over a.
bool suffix_broadcast(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  }
  return true;
}

// dfa/dfb take (a_value, b_value) and return the local partial.
template <class F, class DA, class DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  auto an = a.node();
  auto bn = b.node();
  const auto& av = an->value;
  const auto& bv = bn->value;

  if (an->shape == bn->shape) {
    std::vector<real> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    auto node = make_node(name, an->shape, std::move(out), {an, bn});
    if (node->requires_grad) {
      Node* self = node.get();
      node->backprop = [self, an, bn, dfa, dfb]() {
        const auto& g = self->grad;
        if (an->requires_grad) {
          ensure_grad(*an);
          for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += dfa(an->value[i], bn->value[i]) * g[i];
        }
        if (bn->requires_grad) {
          ensure_grad(*bn);
          for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += dfb(an->value[i], bn->value[i]) * g[i];
        }
      };
    }
    return Tensor(node);
  }

  if (suffix_broadcast(an->shape, bn->shape)) {
    const std::size_t bs = bv.size();
    std::vector<real> out(av.size());
    for (std::size_t base = 0; base < av.size(); base += bs) {
      for (std::size_t j = 0; j < bs; ++j) out[base + j] = f(av[base + j], bv[j]);
    }
    auto node = make_node(name, an->shape, std::move(out), {an, bn});
    if (node->requires_grad) {
      Node* self = node.get();
      node->backprop = [self, an, bn, bs, dfa, dfb]() {
        const auto& g = self->grad;
        if (an->requires_grad) {
          ensure_grad(*an);
          for (std::size_t base = 0; base < g.size(); base += bs) {
            for (std::size_t j = 0; j < bs; ++j) {
              an->grad[base + j] += dfa(an->value[base + j], bn->value[j]) * g[base + j];
            }
          }
        }
        if (bn->requires_grad) {
          ensure_grad(*bn);
          for (std::size_t base = 0; base < g.size(); base += bs) {
            for (std::size_t j = 0; j < bs; ++j) {
              bn->grad[j] += dfb(an->value[base + j], bn->value[j]) * g[base + j];
            }
          }
        }
      };
    }
    return Tensor(node);
  }

  BcastPlan plan = plan_broadcast(name, an->shape, bn->shape);
  std::vector<real> out(static_cast<std::size_t>(numel(plan.out)));
  bcast_walk(plan, [&](long long flat, long long oa, long long ob) {
    out[static_cast<std::size_t>(flat)] =
        f(av[static_cast<std::size_t>(oa)], bv[static_cast<std::size_t>(ob)]);
  });
  auto node = make_node(name, plan.out, std::move(out), {an, bn});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an, bn, plan, dfa, dfb]() {
      const auto& g = self->grad;
      if (an->requires_grad) ensure_grad(*an);
      if (bn->requires_grad) ensure_grad(*bn);
      bcast_walk(plan, [&](long long flat, long long oa, long long ob) {
        const real gv = g[static_cast<std::size_t>(flat)];
        const real avv = an->value[static_cast<std::size_t>(oa)];
        const real bvv = bn->value[static_cast<std::size_t>(ob)];
        if (an->requires_grad) an->grad[static_cast<std::size_t>(oa)] += dfa(avv, bvv) * gv;
        if (bn->requires_grad) bn->grad[static_cast<std::size_t>(ob)] += dfb(avv, bvv) * gv;
      });
    };
  }
  return Tensor(node);
}

// df takes (x, y) where y = f(x).
template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
  auto an = a.node();
  std::vector<real> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(an->value[i]);
  auto node = make_node(name, an->shape, std::move(out), {an});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an, df]() {
      ensure_grad(*an);
      const auto& g = self->grad;
      for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += df(an->value[i], self->value[i]) * g[i];
    };
  }
  return Tensor(node);
}

struct AxisSplit {
  long long outer, n, inner;
};

AxisSplit split_axis(const char* op, const Shape& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  }
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i)
    s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, real v, bool requires_grad) {
  check_shape_valid("full", shape);
  std::vector<real> data(static_cast<std::size_t>(numel(shape)), v);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<real> data, bool requires_grad) {
  check_shape_valid("from_data", shape);
  const auto n = static_cast<std::size_t>(numel(shape));
  if (data.empty()) data.assign(n, real(0));
  if (data.size() != n) {
    throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                     shape_str(shape));
  }
  check_finite("from_data", data);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(real v) { return from_data({1}, {v}); }

int Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("dim: axis out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

std::vector<real>& Tensor::raw_data() {
  if (node_->seq >= 0) throw ShapeError("raw_data: only leaf tensors may be mutated");
  return node_->value;
}

real Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return node_->value[0];
}

void Tensor::set_requires_grad(bool on) {
  if (node_->seq >= 0) throw ShapeError("set_requires_grad: only valid on leaves");
  node_->requires_grad = on;
}

const std::vector<real>& Tensor::grad() const {
  if (node_->grad.empty()) throw ShapeError("grad: no gradient has been accumulated");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

// ---- Tape ----

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const std::shared_ptr<Node>& node) {
  node->seq = static_cast<long long>(nodes_.size());
  nodes_.push_back(node);
}

void Tape::backward(const Tensor& loss) {
  auto ln = loss.node();
  if (!ln) throw ShapeError("backward: undefined loss");
  if (ln->value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(ln->shape));
  }
  if (ln->seq < 0 || static_cast<std::size_t>(ln->seq) >= nodes_.size() ||
      nodes_[static_cast<std::size_t>(ln->seq)].get() != ln.get()) {
    throw ShapeError("backward: loss is detached from the active tape");
  }
  ensure_grad(*ln);
  ln->grad[0] += real(1);
  for (long long i = ln->seq; i >= 0; --i) {
    Node* n = nodes_[static_cast<std::size_t>(i)].get();
    if (!n->grad.empty() && n->backprop) n->backprop();
  }
}

void Tape::clear() { nodes_.clear(); }

void backward(const Tensor& loss) { Tape::active().backward(loss); }

NoGradGuard::NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
NoGradGuard::~NoGradGuard() { grad_enabled_flag() = prev_; }
bool NoGradGuard::grad_enabled() { return grad_enabled_flag(); }

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](real x, real y) { return x + y; }, [](real, real) { return real(1); },
      [](real, real) { return real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](real x, real y) { return x - y; }, [](real, real) { return real(1); },
      [](real, real) { return real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](real x, real y) { return x * y; }, [](real, real y) { return y; },
      [](real x, real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](real x, real y) { return x / y; }, [](real, real y) { return real(1) / y; },
      [](real x, real y) { return -x / (y * y); });
}

Tensor max_elementwise(const Tensor& a, const Tensor& b) {
  return binary_op(
      "max_elementwise", a, b, [](real x, real y) { return x >= y ? x : y; },
      [](real x, real y) { return x >= y ? real(1) : real(0); },
      [](real x, real y) { return x >= y ? real(0) : real(1); });
}

Tensor add_scalar(const Tensor& a, real c) {
  return unary_op(
      "add_scalar", a, [c](real x) { return x + c; }, [](real, real) { return real(1); });
}

Tensor mul_scalar(const Tensor& a, real c) {
  return unary_op(
      "mul_scalar", a, [c](real x) { return x * c; }, [c](real, real) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, real(-1)); }

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](real x) { return x > 0 ? x : real(0); },
      [](real x, real) { return x > 0 ? real(1) : real(0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a,
      [](real x) {
        if (x >= 0) {
          const real e = std::exp(-x);
          return real(1) / (real(1) + e);
        }
        const real e = std::exp(x);
        return e / (real(1) + e);
      },
      [](real, real y) { return y * (real(1) - y); });
}

Tensor gelu(const Tensor& a) {
  constexpr real kInvSqrt2 = real(0.70710678118654752440);
  constexpr real kInvSqrt2Pi = real(0.39894228040143267794);
  return unary_op(
      "gelu", a,
      [](real x) { return real(0.5) * x * (real(1) + std::erf(x * kInvSqrt2)); },
      [](real x, real) {
        const real cdf = real(0.5) * (real(1) + std::erf(x * kInvSqrt2));
        return cdf + x * kInvSqrt2Pi * std::exp(real(-0.5) * x * x);
      });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](real x) { return std::log(x); }, [](real x, real) { return real(1) / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      "sqrt", a, [](real x) { return std::sqrt(x); },
      [](real, real y) { return real(0.5) / y; });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  auto an = a.node();
  real acc = 0;
  for (real x : an->value) acc += x;
  auto node = make_node("sum", {1}, {acc}, {an});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an]() {
      ensure_grad(*an);
      const real g = self->grad[0];
      for (auto& gx : an->grad) gx += g;
    };
  }
  return Tensor(node);
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), real(1) / static_cast<real>(a.size())); }

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  auto an = a.node();
  const AxisSplit s = split_axis("sum", an->shape, axis);
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(an->shape.size()); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(an->shape[static_cast<std::size_t>(i)]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<real> out(static_cast<std::size_t>(s.outer * s.inner), real(0));
  const auto& av = an->value;
  for (long long o = 0; o < s.outer; ++o) {
    for (long long j = 0; j < s.n; ++j) {
      const long long base = (o * s.n + j) * s.inner;
      const long long obase = o * s.inner;
      for (long long r = 0; r < s.inner; ++r) {
        out[static_cast<std::size_t>(obase + r)] += av[static_cast<std::size_t>(base + r)];
      }
    }
  }
  auto node = make_node("sum_axis", std::move(out_shape), std::move(out), {an});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an, s]() {
      ensure_grad(*an);
      const auto& g = self->grad;
      for (long long o = 0; o < s.outer; ++o) {
        for (long long j = 0; j < s.n; ++j) {
          const long long base = (o * s.n + j) * s.inner;
          const long long obase = o * s.inner;
          for (long long r = 0; r < s.inner; ++r) {
            an->grad[static_cast<std::size_t>(base + r)] += g[static_cast<std::size_t>(obase + r)];
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const real n = static_cast<real>(a.dim(axis));
  return mul_scalar(sum(a, axis, keepdim), real(1) / n);
}

Tensor variance(const Tensor& a, int axis, bool keepdim) {
  Tensor m = mean(a, axis, true);
  Tensor d = sub(a, m);
  return mean(mul(d, d), axis, keepdim);
}

namespace {

template <bool Max>
Tensor reduce_extreme(const char* name, const Tensor& a) {
  auto an = a.node();
  std::size_t arg = 0;
  real best = an->value[0];
  for (std::size_t i = 1; i < an->value.size(); ++i) {
    const real x = an->value[i];
    if (Max ? (x > best) : (x < best)) {
      best = x;
      arg = i;
    }
  }
  auto node = make_node(name, {1}, {best}, {an});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an, arg]() {
      ensure_grad(*an);
      an->grad[arg] += self->grad[0];
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor reduce_max(const Tensor& a) { return reduce_extreme<true>("reduce_max", a); }
Tensor reduce_min(const Tensor& a) { return reduce_extreme<false>("reduce_min", a); }

Tensor softmax(const Tensor& a, int axis) {
  auto an = a.node();
  const AxisSplit s = split_axis("softmax", an->shape, axis);
  std::vector<real> out(an->value.size());
  const auto& av = an->value;
  for (long long o = 0; o < s.outer; ++o) {
    for (long long r = 0; r < s.inner; ++r) {
      real mx = av[static_cast<std::size_t>(o * s.n * s.inner + r)];
      for (long long j = 1; j < s.n; ++j) {
        mx = std::max(mx, av[static_cast<std::size_t>((o * s.n + j) * s.inner + r)]);
      }
      real z = 0;
      for (long long j = 0; j < s.n; ++j) {
        const std::size_t i = static_cast<std::size_t>((o * s.n + j) * s.inner + r);
        out[i] = std::exp(av[i] - mx);
        z += out[i];
      }
      for (long long j = 0; j < s.n; ++j) {
        out[static_cast<std::size_t>((o * s.n + j) * s.inner + r)] /= z;
      }
    }
  }
  auto node = make_node("softmax", an->shape, std::move(out), {an});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an, s]() {
      ensure_grad(*an);
      const auto& g = self->grad;
      const auto& y = self->value;
      for (long long o = 0; o < s.outer; ++o) {
        for (long long r = 0; r < s.inner; ++r) {
          real dot = 0;
          for (long long j = 0; j < s.n; ++j) {
            const std::size_t i = static_cast<std::size_t>((o * s.n + j) * s.inner + r);
            dot += g[i] * y[i];
          }
          for (long long j = 0; j < s.n; ++j) {
            const std::size_t i = static_cast<std::size_t>((o * s.n + j) * s.inner + r);
            an->grad[i] += y[i] * (g[i] - dot);
          }
        }
      }
    };
  }
  return Tensor(node);
}

// ---- shape ops ----

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape_valid("reshape", shape);
  auto an = a.node();
  if (numel(shape) != static_cast<long long>(an->value.size())) {
    throw ShapeError("reshape: cannot view " + shape_str(an->shape) + " as " + shape_str(shape));
  }
  auto node = make_node("reshape", std::move(shape), an->value, {an});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an]() {
      ensure_grad(*an);
      for (std::size_t i = 0; i < self->grad.size(); ++i) an->grad[i] += self->grad[i];
    };
  }
  return Tensor(node);
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  auto an = a.node();
  const int R = static_cast<int>(an->shape.size());
  if (static_cast<int>(perm.size()) != R) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(R), false);
  Shape out_shape(static_cast<std::size_t>(R));
  for (int i = 0; i < R; ++i) {
    const int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= R || seen[static_cast<std::size_t>(p)]) {
      throw ShapeError("permute: invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = an->shape[static_cast<std::size_t>(p)];
  }
  const auto in_strides = strides_of(an->shape);
  std::vector<long long> walk(static_cast<std::size_t>(R));
  for (int i = 0; i < R; ++i) {
    walk[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const long long n = numel(out_shape);
  std::vector<real> out(static_cast<std::size_t>(n));
  std::vector<int> idx(static_cast<std::size_t>(R), 0);
  long long src = 0;
  for (long long flat = 0; flat < n; ++flat) {
    out[static_cast<std::size_t>(flat)] = an->value[static_cast<std::size_t>(src)];
    for (int d = R - 1; d >= 0; --d) {
      const std::size_t ud = static_cast<std::size_t>(d);
      ++idx[ud];
      src += walk[ud];
      if (idx[ud] < out_shape[ud]) break;
      idx[ud] = 0;
      src -= walk[ud] * out_shape[ud];
    }
  }
  auto node = make_node("permute", out_shape, std::move(out), {an});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an, out_shape, walk, R]() {
      ensure_grad(*an);
      std::vector<int> idx2(static_cast<std::size_t>(R), 0);
      long long src = 0;
      const long long n = static_cast<long long>(self->grad.size());
      for (long long flat = 0; flat < n; ++flat) {
        an->grad[static_cast<std::size_t>(src)] += self->grad[static_cast<std::size_t>(flat)];
        for (int d = R - 1; d >= 0; --d) {
          const std::size_t ud = static_cast<std::size_t>(d);
          ++idx2[ud];
          src += walk[ud];
          if (idx2[ud] < out_shape[ud]) break;
          idx2[ud] = 0;
          src -= walk[ud] * out_shape[ud];
        }
      }
    };
  }
  return Tensor(node);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const int R = static_cast<int>(first.size());
  if (axis < 0 || axis >= R) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  long long axis_total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != R) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < R; ++i) {
      if (i != axis && s[static_cast<std::size_t>(i)] != first[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
      }
    }
    axis_total += s[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(axis_total);

  const AxisSplit so = split_axis("concat", out_shape, axis);
  std::vector<real> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<std::shared_ptr<Node>> parent_nodes;
  parent_nodes.reserve(parts.size());
  long long offset = 0;
  for (const auto& p : parts) {
    auto pn = p.node();
    parent_nodes.push_back(pn);
    const long long pn_axis = pn->shape[static_cast<std::size_t>(axis)];
    for (long long o = 0; o < so.outer; ++o) {
      const long long src_base = o * pn_axis * so.inner;
      const long long dst_base = (o * so.n + offset) * so.inner;
      std::copy(pn->value.begin() + src_base, pn->value.begin() + src_base + pn_axis * so.inner,
                out.begin() + dst_base);
    }
    offset += pn_axis;
  }
  auto node = make_node("concat", out_shape, std::move(out), parent_nodes);
  if (node->requires_grad) {
    Node* self = node.get();
    std::vector<long long> axis_sizes;
    for (const auto& pn : parent_nodes) axis_sizes.push_back(pn->shape[static_cast<std::size_t>(axis)]);
    node->backprop = [self, parent_nodes, axis_sizes, so]() {
      long long offset = 0;
      for (std::size_t pi = 0; pi < parent_nodes.size(); ++pi) {
        Node* pn = parent_nodes[pi].get();
        const long long pa = axis_sizes[pi];
        if (pn->requires_grad) {
          ensure_grad(*pn);
          for (long long o = 0; o < so.outer; ++o) {
            const long long src_base = (o * so.n + offset) * so.inner;
            const long long dst_base = o * pa * so.inner;
            for (long long i = 0; i < pa * so.inner; ++i) {
              pn->grad[static_cast<std::size_t>(dst_base + i)] +=
                  self->grad[static_cast<std::size_t>(src_base + i)];
            }
          }
        }
        offset += pa;
      }
    };
  }
  return Tensor(node);
}

Tensor select(const Tensor& a, int axis, int index) {
  auto an = a.node();
  const AxisSplit s = split_axis("select", an->shape, axis);
  if (index < 0 || index >= s.n) throw ShapeError("select: index out of range");
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(an->shape.size()); ++i) {
    if (i != axis) out_shape.push_back(an->shape[static_cast<std::size_t>(i)]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<real> out(static_cast<std::size_t>(s.outer * s.inner));
  for (long long o = 0; o < s.outer; ++o) {
    const long long base = (o * s.n + index) * s.inner;
    std::copy(an->value.begin() + base, an->value.begin() + base + s.inner,
              out.begin() + o * s.inner);
  }
  auto node = make_node("select", std::move(out_shape), std::move(out), {an});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an, s, index]() {
      ensure_grad(*an);
      for (long long o = 0; o < s.outer; ++o) {
        const long long base = (o * s.n + index) * s.inner;
        for (long long r = 0; r < s.inner; ++r) {
          an->grad[static_cast<std::size_t>(base + r)] += self->grad[static_cast<std::size_t>(o * s.inner + r)];
        }
      }
    };
  }
  return Tensor(node);
}

Tensor detach(const Tensor& a) { return Tensor::from_data(a.shape(), a.data(), false); }

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto an = a.node();
  auto bn = b.node();
  const int ra = static_cast<int>(an->shape.size());
  const int rb = static_cast<int>(bn->shape.size());
  if (ra < 2) throw ShapeError("matmul: lhs rank must be >= 2, got " + shape_str(an->shape));
  const long long m = an->shape[static_cast<std::size_t>(ra - 2)];
  const long long k = an->shape[static_cast<std::size_t>(ra - 1)];
  long long batch = 1;
  for (int i = 0; i < ra - 2; ++i) batch *= an->shape[static_cast<std::size_t>(i)];

  bool shared_rhs;
  long long n;
  if (rb == 2) {
    shared_rhs = true;
    if (bn->shape[0] != k) {
      throw ShapeError("matmul: inner dims " + shape_str(an->shape) + " x " + shape_str(bn->shape));
    }
    n = bn->shape[1];
  } else if (rb == ra) {
    shared_rhs = false;
    for (int i = 0; i < ra - 2; ++i) {
      if (an->shape[static_cast<std::size_t>(i)] != bn->shape[static_cast<std::size_t>(i)]) {
        throw ShapeError("matmul: batch dims differ, " + shape_str(an->shape) + " x " +
                         shape_str(bn->shape));
      }
    }
    if (bn->shape[static_cast<std::size_t>(rb - 2)] != k) {
      throw ShapeError("matmul: inner dims " + shape_str(an->shape) + " x " + shape_str(bn->shape));
    }
    n = bn->shape[static_cast<std::size_t>(rb - 1)];
  } else {
    throw ShapeError("matmul: rhs must be rank 2 or match lhs rank");
  }

  Shape out_shape(an->shape.begin(), an->shape.end() - 1);
  out_shape.push_back(static_cast<int>(n));
  std::vector<real> out(static_cast<std::size_t>(batch * m * n), real(0));
  const real* A = an->value.data();
  const real* B = bn->value.data();
  real* O = out.data();
  for (long long bI = 0; bI < batch; ++bI) {
    const real* Ab = A + bI * m * k;
    const real* Bb = shared_rhs ? B : B + bI * k * n;
    real* Ob = O + bI * m * n;
    for (long long i = 0; i < m; ++i) {
      real* __restrict Orow = Ob + i * n;
      long long kk = 0;
      for (; kk + 4 <= k; kk += 4) {
        const real a0 = Ab[i * k + kk], a1 = Ab[i * k + kk + 1];
        const real a2 = Ab[i * k + kk + 2], a3 = Ab[i * k + kk + 3];
        if (a0 == real(0) && a1 == real(0) && a2 == real(0) && a3 == real(0)) continue;
        const real* __restrict B0 = Bb + kk * n;
        const real* __restrict B1 = B0 + n;
        const real* __restrict B2 = B1 + n;
        const real* __restrict B3 = B2 + n;
        for (long long j = 0; j < n; ++j) {
          Orow[j] += a0 * B0[j] + a1 * B1[j] + a2 * B2[j] + a3 * B3[j];
        }
      }
      for (; kk < k; ++kk) {
        const real av = Ab[i * k + kk];
        if (av == real(0)) continue;
        const real* __restrict Brow = Bb + kk * n;
        for (long long j = 0; j < n; ++j) Orow[j] += av * Brow[j];
      }
    }
  }
  auto node = make_node("matmul", std::move(out_shape), std::move(out), {an, bn});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, an, bn, batch, m, k, n, shared_rhs]() {
      const real* G = self->grad.data();
      const real* A = an->value.data();
      const real* B = bn->value.data();
      if (an->requires_grad) {
        ensure_grad(*an);
        real* dA = an->grad.data();
        for (long long bI = 0; bI < batch; ++bI) {
          const real* Gb = G + bI * m * n;
          const real* Bb = shared_rhs ? B : B + bI * k * n;
          real* dAb = dA + bI * m * k;
          for (long long i = 0; i < m; ++i) {
            const real* __restrict Grow = Gb + i * n;
            long long kk = 0;
            for (; kk + 4 <= k; kk += 4) {
              const real* __restrict B0 = Bb + kk * n;
              const real* __restrict B1 = B0 + n;
              const real* __restrict B2 = B1 + n;
              const real* __restrict B3 = B2 + n;
              real acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
              for (long long j = 0; j < n; ++j) {
                const real g = Grow[j];
                acc0 += g * B0[j];
                acc1 += g * B1[j];
                acc2 += g * B2[j];
                acc3 += g * B3[j];
              }
              dAb[i * k + kk] += acc0;
              dAb[i * k + kk + 1] += acc1;
              dAb[i * k + kk + 2] += acc2;
              dAb[i * k + kk + 3] += acc3;
            }
            for (; kk < k; ++kk) {
              const real* __restrict Brow = Bb + kk * n;
              real acc = 0;
              for (long long j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
              dAb[i * k + kk] += acc;
            }
          }
        }
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        real* dB = bn->grad.data();
        for (long long bI = 0; bI < batch; ++bI) {
          const real* Gb = G + bI * m * n;
          const real* Ab = A + bI * m * k;
          real* dBb = shared_rhs ? dB : dB + bI * k * n;
          for (long long i = 0; i < m; ++i) {
            const real* __restrict Grow = Gb + i * n;
            for (long long kk = 0; kk < k; ++kk) {
              const real av = Ab[i * k + kk];
              if (av == real(0)) continue;
              real* __restrict dBrow = dBb + kk * n;
              for (long long j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
            }
          }
        }
      }
    };
  }
  return Tensor(node);
}

// ---- conv2d ----

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  auto in = input.node();
  auto kn = kernel.node();
  if (in->shape.size() != 4 || kn->shape.size() != 4) {
    throw ShapeError("conv2d: expected [N,C,H,W] x [Co,C,k,k], got " + shape_str(in->shape) +
                     " x " + shape_str(kn->shape));
  }
  const long long N = in->shape[0], C = in->shape[1], H = in->shape[2], W = in->shape[3];
  const long long Co = kn->shape[0], Ck = kn->shape[1], kh = kn->shape[2], kw = kn->shape[3];
  if (Ck != C) throw ShapeError("conv2d: channel mismatch");
  if (kh != kw || kh % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd extent");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const long long Ho = (H + 2 * padding - kh) / stride + 1;
  const long long Wo = (W + 2 * padding - kw) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: output would be empty");

  std::vector<real> out(static_cast<std::size_t>(N * Co * Ho * Wo), real(0));
  const real* X = in->value.data();
  const real* K = kn->value.data();
  real* O = out.data();
  for (long long nI = 0; nI < N; ++nI) {
    for (long long co = 0; co < Co; ++co) {
      for (long long c = 0; c < C; ++c) {
        const real* Xc = X + (nI * C + c) * H * W;
        const real* Kc = K + (co * C + c) * kh * kw;
        real* Oc = O + (nI * Co + co) * Ho * Wo;
        for (long long oy = 0; oy < Ho; ++oy) {
          const long long iy0 = oy * stride - padding;
          for (long long ky = 0; ky < kh; ++ky) {
            const long long iy = iy0 + ky;
            if (iy < 0 || iy >= H) continue;
            for (long long kx = 0; kx < kw; ++kx) {
              const real kv = Kc[ky * kw + kx];
              if (kv == real(0)) continue;
              const real* Xrow = Xc + iy * W;
              real* Orow = Oc + oy * Wo;
              for (long long ox = 0; ox < Wo; ++ox) {
                const long long ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= W) continue;
                Orow[ox] += kv * Xrow[ix];
              }
            }
          }
        }
      }
    }
  }
  auto node = make_node("conv2d", Shape{static_cast<int>(N), static_cast<int>(Co),
                                        static_cast<int>(Ho), static_cast<int>(Wo)},
                        std::move(out), {in, kn});
  if (node->requires_grad) {
    Node* self = node.get();
    const long long str = stride, pad = padding;
    node->backprop = [self, in, kn, N, C, H, W, Co, kh, kw, str, pad]() {
      const long long Ho = (H + 2 * pad - kh) / str + 1;
      const long long Wo = (W + 2 * pad - kw) / str + 1;
      const real* G = self->grad.data();
      const real* X = in->value.data();
      const real* K = kn->value.data();
      const bool want_dx = in->requires_grad;
      const bool want_dk = kn->requires_grad;
      if (want_dx) ensure_grad(*in);
      if (want_dk) ensure_grad(*kn);
      real* dX = want_dx ? in->grad.data() : nullptr;
      real* dK = want_dk ? kn->grad.data() : nullptr;
      for (long long nI = 0; nI < N; ++nI) {
        for (long long co = 0; co < Co; ++co) {
          const real* Gc = G + (nI * Co + co) * Ho * Wo;
          for (long long c = 0; c < C; ++c) {
            const real* Xc = X + (nI * C + c) * H * W;
            const real* Kc = K + (co * C + c) * kh * kw;
            real* dXc = want_dx ? dX + (nI * C + c) * H * W : nullptr;
            real* dKc = want_dk ? dK + (co * C + c) * kh * kw : nullptr;
            for (long long oy = 0; oy < Ho; ++oy) {
              const long long iy0 = oy * str - pad;
              for (long long ox = 0; ox < Wo; ++ox) {
                const real g = Gc[oy * Wo + ox];
                if (g == real(0)) continue;
                const long long ix0 = ox * str - pad;
                for (long long ky = 0; ky < kh; ++ky) {
                  const long long iy = iy0 + ky;
                  if (iy < 0 || iy >= H) continue;
                  for (long long kx = 0; kx < kw; ++kx) {
                    const long long ix = ix0 + kx;
                    if (ix < 0 || ix >= W) continue;
                    if (want_dx) dXc[iy * W + ix] += Kc[ky * kw + kx] * g;
                    if (want_dk) dKc[ky * kw + kx] += Xc[iy * W + ix] * g;
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor pad2d_replicate(const Tensor& input, int pad) {
  auto in = input.node();
  if (in->shape.size() != 4) throw ShapeError("pad2d_replicate: expected [N,C,H,W]");
  if (pad < 0) throw ShapeError("pad2d_replicate: negative pad");
  if (pad == 0) return input;
  const long long N = in->shape[0], C = in->shape[1], H = in->shape[2], W = in->shape[3];
  const long long Ho = H + 2 * pad, Wo = W + 2 * pad;
  std::vector<real> out(static_cast<std::size_t>(N * C * Ho * Wo));
  const real* X = in->value.data();
  for (long long nc = 0; nc < N * C; ++nc) {
    const real* Xc = X + nc * H * W;
    real* Oc = out.data() + nc * Ho * Wo;
    for (long long oy = 0; oy < Ho; ++oy) {
      const long long iy = std::clamp(oy - pad, 0LL, H - 1);
      for (long long ox = 0; ox < Wo; ++ox) {
        const long long ix = std::clamp(ox - pad, 0LL, W - 1);
        Oc[oy * Wo + ox] = Xc[iy * W + ix];
      }
    }
  }
  auto node = make_node("pad2d_replicate", Shape{static_cast<int>(N), static_cast<int>(C),
                                                 static_cast<int>(Ho), static_cast<int>(Wo)},
                        std::move(out), {in});
  if (node->requires_grad) {
    Node* self = node.get();
    const long long p = pad;
    node->backprop = [self, in, N, C, H, W, p]() {
      ensure_grad(*in);
      const long long Ho = H + 2 * p, Wo = W + 2 * p;
      const real* G = self->grad.data();
      real* dX = in->grad.data();
      for (long long nc = 0; nc < N * C; ++nc) {
        const real* Gc = G + nc * Ho * Wo;
        real* dXc = dX + nc * H * W;
        for (long long oy = 0; oy < Ho; ++oy) {
          const long long iy = std::clamp(oy - p, 0LL, H - 1);
          for (long long ox = 0; ox < Wo; ++ox) {
            const long long ix = std::clamp(ox - p, 0LL, W - 1);
            dXc[iy * W + ix] += Gc[oy * Wo + ox];
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor unfold_patches(const Tensor& image, int patch) {
  auto in = image.node();
  if (in->shape.size() != 4) throw ShapeError("unfold_patches: expected [N,C,H,W]");
  const long long N = in->shape[0], C = in->shape[1], H = in->shape[2], W = in->shape[3];
  if (patch < 1 || H % patch != 0 || W % patch != 0) {
    throw ShapeError("unfold_patches: image extent not divisible by patch");
  }
  const long long gh = H / patch, gw = W / patch;
  const long long T = gh * gw, F = C * patch * patch;
  std::vector<real> out(static_cast<std::size_t>(N * T * F));
  const real* X = in->value.data();
  for (long long nI = 0; nI < N; ++nI) {
    for (long long ty = 0; ty < gh; ++ty) {
      for (long long tx = 0; tx < gw; ++tx) {
        real* dst = out.data() + ((nI * T) + ty * gw + tx) * F;
        for (long long c = 0; c < C; ++c) {
          const real* Xc = X + (nI * C + c) * H * W;
          for (long long py = 0; py < patch; ++py) {
            const real* row = Xc + (ty * patch + py) * W + tx * patch;
            real* d = dst + (c * patch + py) * patch;
            std::copy(row, row + patch, d);
          }
        }
      }
    }
  }
  auto node = make_node("unfold_patches", Shape{static_cast<int>(N), static_cast<int>(T),
                                                static_cast<int>(F)},
                        std::move(out), {in});
  if (node->requires_grad) {
    Node* self = node.get();
    const long long p = patch;
    node->backprop = [self, in, N, C, H, W, p]() {
      ensure_grad(*in);
      const long long gh = H / p, gw = W / p, T = gh * gw, F = C * p * p;
      const real* G = self->grad.data();
      real* dX = in->grad.data();
      for (long long nI = 0; nI < N; ++nI) {
        for (long long ty = 0; ty < gh; ++ty) {
          for (long long tx = 0; tx < gw; ++tx) {
            const real* src = G + ((nI * T) + ty * gw + tx) * F;
            for (long long c = 0; c < C; ++c) {
              real* dXc = dX + (nI * C + c) * H * W;
              for (long long py = 0; py < p; ++py) {
                real* row = dXc + (ty * p + py) * W + tx * p;
                const real* s = src + (c * p + py) * p;
                for (long long px = 0; px < p; ++px) row[px] += s[px];
              }
            }
          }
        }
      }
    };
  }
  return Tensor(node);
}

// ---- bilinear sampling ----

namespace {

struct SampleDims {
  long long N, C, H, W, P;
  bool batched;
};

SampleDims sample_dims(const Shape& map, const Shape& pts) {
  SampleDims d{};
  if (map.size() == 3 && pts.size() == 2) {
    d.batched = false;
    d.N = 1;
    d.C = map[0];
    d.H = map[1];
    d.W = map[2];
    d.P = pts[0];
    if (pts[1] != 2) throw ShapeError("bilinear_sample: points must be [P,2]");
  } else if (map.size() == 4 && pts.size() == 3) {
    d.batched = true;
    d.N = map[0];
    d.C = map[1];
    d.H = map[2];
    d.W = map[3];
    d.P = pts[1];
    if (pts[0] != map[0] || pts[2] != 2) {
      throw ShapeError("bilinear_sample: points must be [N,P,2] matching map batch");
    }
  } else {
    throw ShapeError("bilinear_sample: map " + shape_str(map) + " with points " + shape_str(pts));
  }
  return d;
}

}  // namespace

Tensor bilinear_sample_px(const Tensor& map, const Tensor& points) {
  auto mn = map.node();
  auto pn = points.node();
  const SampleDims d = sample_dims(mn->shape, pn->shape);
  std::vector<real> out(static_cast<std::size_t>(d.N * d.P * d.C));
  const real* M = mn->value.data();
  const real* Pv = pn->value.data();
  for (long long nI = 0; nI < d.N; ++nI) {
    const real* Mb = M + nI * d.C * d.H * d.W;
    for (long long p = 0; p < d.P; ++p) {
      const real x = Pv[(nI * d.P + p) * 2 + 0];
      const real y = Pv[(nI * d.P + p) * 2 + 1];
      const real xc = std::clamp(x, real(0), static_cast<real>(d.W - 1));
      const real yc = std::clamp(y, real(0), static_cast<real>(d.H - 1));
      const long long x0 = static_cast<long long>(std::floor(xc));
      const long long y0 = static_cast<long long>(std::floor(yc));
      const long long x1 = std::min(x0 + 1, d.W - 1);
      const long long y1 = std::min(y0 + 1, d.H - 1);
      const real fx = xc - static_cast<real>(x0);
      const real fy = yc - static_cast<real>(y0);
      real* dst = out.data() + (nI * d.P + p) * d.C;
      for (long long c = 0; c < d.C; ++c) {
        const real* Mc = Mb + c * d.H * d.W;
        const real v00 = Mc[y0 * d.W + x0];
        const real v01 = Mc[y0 * d.W + x1];
        const real v10 = Mc[y1 * d.W + x0];
        const real v11 = Mc[y1 * d.W + x1];
        dst[c] = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  }
  Shape out_shape = d.batched ? Shape{static_cast<int>(d.N), static_cast<int>(d.P),
                                      static_cast<int>(d.C)}
                              : Shape{static_cast<int>(d.P), static_cast<int>(d.C)};
  auto node = make_node("bilinear_sample", std::move(out_shape), std::move(out), {mn, pn});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, mn, pn, d]() {
      const bool want_dm = mn->requires_grad;
      const bool want_dp = pn->requires_grad;
      if (want_dm) ensure_grad(*mn);
      if (want_dp) ensure_grad(*pn);
      const real* M = mn->value.data();
      const real* Pv = pn->value.data();
      const real* G = self->grad.data();
      for (long long nI = 0; nI < d.N; ++nI) {
        const real* Mb = M + nI * d.C * d.H * d.W;
        real* dMb = want_dm ? mn->grad.data() + nI * d.C * d.H * d.W : nullptr;
        for (long long p = 0; p < d.P; ++p) {
          const real x = Pv[(nI * d.P + p) * 2 + 0];
          const real y = Pv[(nI * d.P + p) * 2 + 1];
          const real xc = std::clamp(x, real(0), static_cast<real>(d.W - 1));
          const real yc = std::clamp(y, real(0), static_cast<real>(d.H - 1));
          const long long x0 = static_cast<long long>(std::floor(xc));
          const long long y0 = static_cast<long long>(std::floor(yc));
          const long long x1 = std::min(x0 + 1, d.W - 1);
          const long long y1 = std::min(y0 + 1, d.H - 1);
          const real fx = xc - static_cast<real>(x0);
          const real fy = yc - static_cast<real>(y0);
          // clamp kills the coordinate gradient outside the open interior
          const bool in_x = x > real(0) && x < static_cast<real>(d.W - 1);
          const bool in_y = y > real(0) && y < static_cast<real>(d.H - 1);
          const real* g = G + (nI * d.P + p) * d.C;
          real gx = 0, gy = 0;
          for (long long c = 0; c < d.C; ++c) {
            const real* Mc = Mb + c * d.H * d.W;
            const real v00 = Mc[y0 * d.W + x0];
            const real v01 = Mc[y0 * d.W + x1];
            const real v10 = Mc[y1 * d.W + x0];
            const real v11 = Mc[y1 * d.W + x1];
            const real gc = g[c];
            if (want_dm) {
              real* dMc = dMb + c * d.H * d.W;
              dMc[y0 * d.W + x0] += (1 - fy) * (1 - fx) * gc;
              dMc[y0 * d.W + x1] += (1 - fy) * fx * gc;
              dMc[y1 * d.W + x0] += fy * (1 - fx) * gc;
              dMc[y1 * d.W + x1] += fy * fx * gc;
            }
            if (want_dp) {
              gx += gc * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
              gy += gc * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
            }
          }
          if (want_dp) {
            if (in_x) pn->grad[(nI * d.P + p) * 2 + 0] += gx;
            if (in_y) pn->grad[(nI * d.P + p) * 2 + 1] += gy;
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor bilinear_sample(const Tensor& map, const Tensor& points01) {
  const Shape& ms = map.shape();
  const long long W = ms[ms.size() - 1];
  const long long H = ms[ms.size() - 2];
  Tensor scale = Tensor::from_data({2}, {static_cast<real>(W), static_cast<real>(H)});
  Tensor px = add_scalar(mul(points01, scale), real(-0.5));
  return bilinear_sample_px(map, px);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.dim(-1) || bias.dim(0) != x.dim(-1)) {
    throw ShapeError("layer_norm: gain/bias must be [D] matching the last axis");
  }
  const int last = x.rank() - 1;
  Tensor mu = mean(x, last, true);
  Tensor centered = sub(x, mu);
  Tensor var = mean(mul(centered, centered), last, true);
  Tensor normd = div(centered, sqrt(add_scalar(var, eps)));
  return add(mul(normd, gain), bias);
}

}  // namespace slg
