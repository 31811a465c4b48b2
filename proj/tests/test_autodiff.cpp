#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "slg/gradcheck.hpp"
#include "slg/rng.hpp"
#include "slg/tensor.hpp"

using namespace slg;

namespace {

Tensor leaf(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
  std::vector<real> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<real>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

// central differences on every entry of every leaf
double max_fd_error(const std::vector<Tensor>& leaves,
                    const std::function<Tensor()>& graph, double eps = 1e-5) {
  Tape::active().clear();
  for (auto t : leaves) t.zero_grad();
  backward(graph());
  std::vector<std::vector<real>> analytic;
  for (const auto& t : leaves) {
    analytic.push_back(t.has_grad() ? t.grad()
                                    : std::vector<real>(static_cast<std::size_t>(t.size()), 0));
  }
  double worst = 0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor t = leaves[li];
    for (std::size_t j = 0; j < static_cast<std::size_t>(t.size()); ++j) {
      const real saved = t.raw_data()[j];
      double lp, lm;
      {
        NoGradGuard ng;
        Tape::active().clear();
        t.raw_data()[j] = saved + static_cast<real>(eps);
        lp = graph().item();
        t.raw_data()[j] = saved - static_cast<real>(eps);
        lm = graph().item();
        t.raw_data()[j] = saved;
      }
      const double fd = (lp - lm) / (2 * eps);
      const double an = analytic[li][j];
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4}));
    }
  }
  Tape::active().clear();
  return worst;
}

}  // namespace

TEST_CASE("backward of sum(x*x) gives 2x") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tape::active().clear();
  backward(sum(mul(x, x)));
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == doctest::Approx(2));
  CHECK(x.grad()[1] == doctest::Approx(4));
  CHECK(x.grad()[2] == doctest::Approx(6));
  Tape::active().clear();
}

TEST_CASE("sigmoid gradient at zero is 0.25") {
  Tensor x = Tensor::zeros({1}, true);
  Tape::active().clear();
  backward(sigmoid(x));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
  Tape::active().clear();
}

TEST_CASE("gradients accumulate additively across multiple uses") {
  Tensor x = Tensor::from_data({2}, {3, 4}, true);
  Tape::active().clear();
  backward(sum(add(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2));
  CHECK(x.grad()[1] == doctest::Approx(2));
  Tape::active().clear();
}

TEST_CASE("backward is linear: grad(a*f + b*g) = a*grad(f) + b*grad(g)") {
  Rng rng(7);
  Tensor x = leaf(rng, {4});
  auto f = [&]() { return sum(mul(x, x)); };
  auto g = [&]() { return sum(sigmoid(x)); };
  const double a = 2.5, b = -1.25;

  Tape::active().clear();
  x.zero_grad();
  backward(f());
  std::vector<real> gf = x.grad();
  Tape::active().clear();
  x.zero_grad();
  backward(g());
  std::vector<real> gg = x.grad();
  Tape::active().clear();
  x.zero_grad();
  backward(add(mul_scalar(f(), a), mul_scalar(g(), b)));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
  }
  Tape::active().clear();
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tape::active().clear();
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y), ShapeError);          // non-scalar
  CHECK_THROWS_AS(backward(x), ShapeError);          // leaf, not on the tape
  Tensor constant = Tensor::scalar(1);
  CHECK_THROWS_AS(backward(constant), ShapeError);   // detached
  Tape::active().clear();
}

TEST_CASE("a purely linear graph matches finite differences to 1e-10") {
  Rng rng(13);
  Tensor a = leaf(rng, {3, 4});
  Tensor b = leaf(rng, {4, 2});
  Tensor c = leaf(rng, {3, 2});
  auto graph = [&]() {
    Tensor y = add(matmul(a, b), mul_scalar(c, 3));
    Tensor z = concat({y, neg(y)}, 1);
    return sum(add(select(z, 1, 0), sum(permute(y, {1, 0}), 0)));
  };
  // central differences are exact for linear maps at any step, so a large step
  // leaves only rounding
  CHECK(max_fd_error({a, b, c}, graph, 0.25) < 1e-10);
}

TEST_CASE("every primitive passes finite-difference checks at random points") {
  Rng rng(17);
  SUBCASE("elementwise and reductions") {
    Tensor x = leaf(rng, {2, 5}, 0.2, 1.5);
    Tensor y = leaf(rng, {2, 5}, 0.2, 1.5);
    auto graph = [&]() {
      Tensor t = add(mul(x, y), div(x, add_scalar(y, 1)));
      t = add(t, sqrt(add_scalar(mul(x, x), 0.1)));
      t = add(t, exp(mul_scalar(x, 0.3)));
      t = add(t, log(add_scalar(y, 0.5)));
      t = add(t, gelu(sub(x, y)));
      t = add(t, relu(add_scalar(x, 0.05)));
      t = add(t, sigmoid(t));
      Tensor r = add(mean(t, 1), variance(t, 1));
      return add(add(sum(r), reduce_max(t)), reduce_min(t));
    };
    CHECK(max_fd_error({x, y}, graph) < 1e-4);
  }
  SUBCASE("softmax and layer_norm") {
    Tensor x = leaf(rng, {3, 6});
    Tensor g = leaf(rng, {6}, 0.6, 1.4);
    Tensor b = leaf(rng, {6}, -0.4, 0.4);
    auto graph = [&]() {
      return sum(add(softmax(x, 1), mul(layer_norm(x, g, b), softmax(x, 0))));
    };
    CHECK(max_fd_error({x, g, b}, graph) < 1e-4);
  }
  SUBCASE("conv and padding") {
    Tensor x = leaf(rng, {1, 2, 5, 5});
    Tensor k = leaf(rng, {2, 2, 3, 3});
    auto graph = [&]() {
      Tensor c = conv2d(x, k, 2, 1);
      Tensor p = conv2d(pad2d_replicate(x, 1), k, 1, 0);
      return add(sum(c), mean(p));
    };
    CHECK(max_fd_error({x, k}, graph) < 1e-4);
  }
  SUBCASE("bilinear sampling in map and points") {
    Tensor m = leaf(rng, {2, 5, 5});
    Tensor p = leaf(rng, {6, 2}, 0.6, 3.4);  // interior, off the integer grid
    auto graph = [&]() { return sum(bilinear_sample_px(m, p)); };
    CHECK(max_fd_error({m, p}, graph) < 1e-4);
  }
  SUBCASE("max_elementwise away from ties") {
    Tensor a = leaf(rng, {8}, 0.5, 1.0);
    Tensor b = leaf(rng, {8}, -1.0, -0.5);
    auto graph = [&]() { return sum(max_elementwise(a, b)); };
    CHECK(max_fd_error({a, b}, graph) < 1e-4);
  }
  SUBCASE("unfold with batched matmul") {
    Tensor x = leaf(rng, {2, 2, 4, 4});
    Tensor w = leaf(rng, {8, 3});
    auto graph = [&]() { return sum(matmul(unfold_patches(x, 2), w)); };
    CHECK(max_fd_error({x, w}, graph) < 1e-4);
  }
}

TEST_CASE("gradcheck covers the whole primitive set in one graph") {
  GradReport rep = gradcheck("tensor_autodiff", 123, 200);
  REQUIRE(rep.modules.size() == 1);
  CHECK(rep.modules[0].params_checked == 200);
  CHECK(rep.modules[0].max_rel_err < 1e-4);
}

TEST_CASE("gradcheck reports are deterministic given the seed") {
  GradReport a = gradcheck("tensor_autodiff", 5, 60);
  GradReport b = gradcheck("tensor_autodiff", 5, 60);
  CHECK(a.modules[0].max_rel_err == b.modules[0].max_rel_err);
  CHECK(a.modules[0].worst_param == b.modules[0].worst_param);
}

TEST_CASE("NoGradGuard suppresses recording") {
  Tensor x = Tensor::full({2}, 1, true);
  const std::size_t before = Tape::active().size();
  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape::active().size() == before);
  Tape::active().clear();
}
