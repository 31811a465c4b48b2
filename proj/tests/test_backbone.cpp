#include <cmath>
#include <vector>

#include <doctest.h>

#include "slg/backbone.hpp"
#include "slg/rng.hpp"

using namespace slg;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.depth = 2;
  c.width = 32;
  c.heads = 4;
  return c;
}

Tensor random_image(Rng& rng, const BackboneConfig& c, int n = 1) {
  std::vector<real> v(static_cast<std::size_t>(n) * 4 * c.image_size * c.image_size);
  for (auto& x : v) x = static_cast<real>(rng.uniform(0, 1));
  return Tensor::from_data({n, 4, c.image_size, c.image_size}, std::move(v));
}

}  // namespace

TEST_CASE("same seed twice gives bit-identical parameters") {
  const BackboneConfig cfg = small_config();
  Backbone a = Backbone::init(cfg, 42);
  Backbone b = Backbone::init(cfg, 42);
  ParamSet pa, pb;
  a.collect(pa, ParamLabel::Frozen, ParamLabel::Frozen);
  b.collect(pb, ParamLabel::Frozen, ParamLabel::Frozen);
  REQUIRE(pa.entries().size() == pb.entries().size());
  for (std::size_t i = 0; i < pa.entries().size(); ++i) {
    CHECK(pa.entries()[i].tensor.data() == pb.entries()[i].tensor.data());
  }
  Backbone c = Backbone::init(cfg, 43);
  ParamSet pc;
  c.collect(pc, ParamLabel::Frozen, ParamLabel::Frozen);
  CHECK(pc.entries()[0].tensor.data() != pa.entries()[0].tensor.data());
}

TEST_CASE("parameter count matches the closed-form architecture arithmetic") {
  const BackboneConfig cfg;  // the default desk config
  Backbone bb = Backbone::init(cfg, 1);
  // independent arithmetic, written out rather than shared with the library
  const long long D = cfg.width;
  const long long T = (cfg.image_size / cfg.patch_size) * (cfg.image_size / cfg.patch_size);
  const long long patch = 4LL * cfg.patch_size * cfg.patch_size * D + D;
  const long long pos = T * D;
  const long long qkv = D * 3 * D + 3 * D;
  const long long proj = D * D + D;
  const long long mlp = D * 4 * D + 4 * D + 4 * D * D + D;
  const long long norms = 4 * D;
  const long long expected = patch + pos + cfg.depth * (qkv + proj + mlp + norms) + 2 * D;
  CHECK(bb.param_count() == expected);
  CHECK(Backbone::expected_param_count(cfg) == expected);

  ParamSet ps;
  bb.collect(ps, ParamLabel::Frozen, ParamLabel::Frozen);
  CHECK(ps.count_total() == expected);
}

TEST_CASE("patch embedding produces the expected token grid") {
  BackboneConfig cfg;
  cfg.image_size = 64;
  cfg.patch_size = 8;
  cfg.width = 16;
  cfg.heads = 4;
  cfg.depth = 1;
  Backbone bb = Backbone::init(cfg, 7);
  Rng rng(1);
  TokenGrid tg = bb.patch_embed(random_image(rng, cfg));
  CHECK(tg.grid_h == 8);
  CHECK(tg.grid_w == 8);
  CHECK(tg.tokens.shape() == Shape{1, 64, 16});
  CHECK_THROWS_AS(bb.patch_embed(Tensor::zeros({1, 3, 64, 64})), ShapeError);
}

TEST_CASE("the paper-ratio grid is 1/16 of the input") {
  BackboneConfig cfg;
  cfg.image_size = 64;
  cfg.patch_size = 16;
  cfg.width = 16;
  cfg.heads = 4;
  cfg.depth = 1;
  Backbone bb = Backbone::init(cfg, 7);
  Rng rng(2);
  TokenGrid tg = bb.patch_embed(random_image(rng, cfg));
  CHECK(tg.grid_h == 64 / 16);
  CHECK(tg.tokens.dim(1) == 16);
}

TEST_CASE("zero image embeds to positional embedding plus bias") {
  const BackboneConfig cfg = small_config();
  Backbone bb = Backbone::init(cfg, 9);
  TokenGrid tg = bb.patch_embed(Tensor::zeros({1, 4, cfg.image_size, cfg.image_size}));
  // recover pos+bias through the registered parameters
  ParamSet ps;
  bb.collect(ps, ParamLabel::Frozen, ParamLabel::Frozen);
  const auto& pos = ps.find("backbone.pos")->tensor;
  const auto& bias = ps.find("backbone.patch.b")->tensor;
  const int T = cfg.tokens(), D = cfg.width;
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d < D; ++d) {
      CHECK(tg.tokens.data()[static_cast<std::size_t>(t) * D + d] ==
            doctest::Approx(pos.data()[static_cast<std::size_t>(t) * D + d] + bias.data()[d])
                .epsilon(1e-15));
    }
  }
}

TEST_CASE("swapping two input patches swaps the pre-position projections") {
  const BackboneConfig cfg = small_config();
  Backbone bb = Backbone::init(cfg, 11);
  Rng rng(5);
  Tensor img = random_image(rng, cfg);
  const int p = cfg.patch_size, S = cfg.image_size, g = S / p;

  // swap patch (0,0) with patch (1,2)
  std::vector<real> swapped = img.data();
  for (int c = 0; c < 4; ++c) {
    for (int py = 0; py < p; ++py) {
      for (int px = 0; px < p; ++px) {
        const std::size_t a = (static_cast<std::size_t>(c) * S + py) * S + px;
        const std::size_t b = (static_cast<std::size_t>(c) * S + p + py) * S + 2 * p + px;
        std::swap(swapped[a], swapped[b]);
      }
    }
  }
  Tensor img2 = Tensor::from_data(img.shape(), swapped);
  // pos and bias cancel in the difference against the zero image
  TokenGrid zero = bb.patch_embed(Tensor::zeros({1, 4, S, S}));
  TokenGrid t1 = bb.patch_embed(img);
  TokenGrid t2 = bb.patch_embed(img2);
  const int D = cfg.width;
  auto proj = [&](const TokenGrid& tg, int tok, int d) {
    return tg.tokens.data()[static_cast<std::size_t>(tok) * D + d] -
           zero.tokens.data()[static_cast<std::size_t>(tok) * D + d];
  };
  const int ta = 0, tb = 1 * g + 2;
  for (int d = 0; d < D; ++d) {
    CHECK(proj(t1, ta, d) == doctest::Approx(proj(t2, tb, d)).epsilon(1e-12));
    CHECK(proj(t1, tb, d) == doctest::Approx(proj(t2, ta, d)).epsilon(1e-12));
  }
}

TEST_CASE("attention rows sum to one and blocks preserve shape") {
  const BackboneConfig cfg = small_config();
  Backbone bb = Backbone::init(cfg, 13);
  Rng rng(3);
  TokenGrid tg = bb.patch_embed(random_image(rng, cfg, 2));
  Tensor attn = bb.attention_weights(0, tg.tokens);
  const int T = cfg.tokens();
  REQUIRE(attn.shape() == Shape{2, cfg.heads, T, T});
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < cfg.heads; ++h)
      for (int q = 0; q < T; ++q) {
        double s = 0;
        for (int k = 0; k < T; ++k) {
          s += attn.data()[((static_cast<std::size_t>(n) * cfg.heads + h) * T + q) * T + k];
        }
        CHECK(std::abs(s - 1.0) < 1e-10);
      }

  Tensor out = tg.tokens;
  for (int i = 0; i < cfg.depth; ++i) {
    out = bb.run_block(i, out);
    CHECK(out.shape() == tg.tokens.shape());
  }
  CHECK_THROWS_AS(bb.run_block(cfg.depth, out), ShapeError);
}

TEST_CASE("a single token attends only to itself") {
  BackboneConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 8;  // one token
  cfg.width = 16;
  cfg.heads = 4;
  cfg.depth = 1;
  Backbone bb = Backbone::init(cfg, 17);
  Rng rng(9);
  TokenGrid tg = bb.patch_embed(random_image(rng, cfg));
  Tensor attn = bb.attention_weights(0, tg.tokens);
  REQUIRE(attn.size() == cfg.heads);
  for (real w : attn.data()) CHECK(w == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("token reference coordinates are recoverable pixel centers") {
  Tensor ref = reference_points(2, 3);
  REQUIRE(ref.shape() == Shape{6, 2});
  CHECK(ref.data()[0] == doctest::Approx(0.5 / 3));
  CHECK(ref.data()[1] == doctest::Approx(0.5 / 2));
  CHECK(ref.data()[2 * 2 + 0] == doctest::Approx(2.5 / 3));  // token (row0, col2)
  CHECK(ref.data()[5 * 2 + 1] == doctest::Approx(1.5 / 2));
}

TEST_CASE("forward is deterministic") {
  const BackboneConfig cfg = small_config();
  Backbone bb = Backbone::init(cfg, 19);
  Rng rng(4);
  Tensor img = random_image(rng, cfg);
  Tensor a = bb.final_norm(bb.run_block(0, bb.patch_embed(img).tokens));
  Tensor b = bb.final_norm(bb.run_block(0, bb.patch_embed(img).tokens));
  CHECK(a.data() == b.data());
}
