#include "slg/data.hpp"

#include <algorithm>
#include <cmath>

#include "slg/rng.hpp"

namespace slg {

const char* condition_name(SceneCondition c) {
  switch (c) {
    case SceneCondition::Day: return "day";
    case SceneCondition::Night: return "night";
    case SceneCondition::Overexposed: return "overexposed";
    case SceneCondition::ThermalCrossover: return "thermal_crossover";
  }
  return "?";
}

const char* policy_name(CaptionPolicy p) {
  switch (p) {
    case CaptionPolicy::Structured: return "structured";
    case CaptionPolicy::FreeFormNoisy: return "free_form_noisy";
    case CaptionPolicy::CategoryList: return "category_list";
  }
  return "?";
}

CaptionPolicy parse_policy(const std::string& s) {
  if (s == "structured") return CaptionPolicy::Structured;
  if (s == "free_form_noisy" || s == "free-form-noisy") return CaptionPolicy::FreeFormNoisy;
  if (s == "category_list" || s == "category-list") return CaptionPolicy::CategoryList;
  throw ConfigError("unknown caption policy: " + s);
}

namespace {

struct Canvas {
  int size;
  std::vector<real> v;  // 3 channels
  std::vector<real> t;  // 1 channel

  explicit Canvas(int s) : size(s), v(static_cast<std::size_t>(3) * s * s), t(static_cast<std::size_t>(s) * s) {}

  real& vis(int c, int y, int x) { return v[(static_cast<std::size_t>(c) * size + y) * size + x]; }
  real& thm(int y, int x) { return t[static_cast<std::size_t>(y) * size + x]; }
};

double soft_disc(double dist, double radius) {
  return 1.0 / (1.0 + std::exp((dist - radius) / 0.5));
}

void render_blob_visible(Canvas& img, const Blob& b, const double tint[3]) {
  const int s = img.size;
  const int lo_y = std::max(0, static_cast<int>(b.cy - b.radius - 3));
  const int hi_y = std::min(s - 1, static_cast<int>(b.cy + b.radius + 3));
  const int lo_x = std::max(0, static_cast<int>(b.cx - b.radius - 3));
  const int hi_x = std::min(s - 1, static_cast<int>(b.cx + b.radius + 3));
  for (int y = lo_y; y <= hi_y; ++y) {
    for (int x = lo_x; x <= hi_x; ++x) {
      const double d = std::hypot(x + 0.5 - b.cx, y + 0.5 - b.cy);
      const double w = b.amplitude * soft_disc(d, b.radius);
      for (int c = 0; c < 3; ++c) img.vis(c, y, x) += static_cast<real>(w * tint[c]);
    }
  }
}

void render_blob_thermal(Canvas& img, const Blob& b) {
  const int s = img.size;
  const int lo_y = std::max(0, static_cast<int>(b.cy - b.radius - 3));
  const int hi_y = std::min(s - 1, static_cast<int>(b.cy + b.radius + 3));
  const int lo_x = std::max(0, static_cast<int>(b.cx - b.radius - 3));
  const int hi_x = std::min(s - 1, static_cast<int>(b.cx + b.radius + 3));
  for (int y = lo_y; y <= hi_y; ++y) {
    for (int x = lo_x; x <= hi_x; ++x) {
      const double d = std::hypot(x + 0.5 - b.cx, y + 0.5 - b.cy);
      img.thm(y, x) += static_cast<real>(b.amplitude * soft_disc(d, b.radius));
    }
  }
}

int token_of(const Blob& b, int image_size, int grid) {
  const double patch = static_cast<double>(image_size) / grid;
  const int tx = std::min(grid - 1, static_cast<int>(b.cx / patch));
  const int ty = std::min(grid - 1, static_cast<int>(b.cy / patch));
  return ty * grid + tx;
}

SceneCondition draw_condition(const ConditionMix& mix, Rng& rng) {
  const double total = mix.day + mix.night + mix.overexposed + mix.thermal_crossover;
  double u = rng.uniform() * total;
  if ((u -= mix.day) < 0) return SceneCondition::Day;
  if ((u -= mix.night) < 0) return SceneCondition::Night;
  if ((u -= mix.overexposed) < 0) return SceneCondition::Overexposed;
  return SceneCondition::ThermalCrossover;
}

}  // namespace

StructuredCaption make_caption(SceneCondition condition, bool cluttered, int blob_count,
                               CaptionPolicy policy, Rng& rng) {
  StructuredCaption c;
  switch (condition) {
    case SceneCondition::Day:
      c.env = "clear daylight illumination";
      c.therm = "distinct warm thermal signatures";
      break;
    case SceneCondition::Night:
      c.env = "dimly lit night scene";
      c.therm = "distinct warm thermal signatures";
      break;
    case SceneCondition::Overexposed:
      c.env = "overexposed glare washed highlights";
      c.therm = "distinct warm thermal signatures";
      break;
    case SceneCondition::ThermalCrossover:
      c.env = "clear daylight illumination";
      c.therm = "thermal crossover targets faded isothermal";
      break;
  }
  c.type = cluttered ? "cluttered textured courtyard" : "open uniform area";
  if (blob_count <= 2) {
    c.obj = "sparse scattered targets";
  } else if (blob_count <= 4) {
    c.obj = "moderate target density";
  } else {
    c.obj = "crowded cluster of targets";
  }

  switch (policy) {
    case CaptionPolicy::Structured:
      return c;
    case CaptionPolicy::FreeFormNoisy: {
      // same sentences, slot labels gone: the four texts land in the four
      // fields in a per-sample random order
      std::vector<std::string> parts = {c.env, c.type, c.obj, c.therm};
      rng.shuffle(parts);
      StructuredCaption f;
      f.env = parts[0];
      f.type = parts[1];
      f.obj = parts[2];
      f.therm = parts[3];
      return f;
    }
    case CaptionPolicy::CategoryList: {
      StructuredCaption f;
      f.obj = "target classes: disc blob target";
      return f;
    }
  }
  return c;
}

std::vector<SyntheticSample> synthesize(const SynthConfig& cfg, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("synthesize: n must be >= 1");
  if (cfg.image_size < 8 || cfg.grid < 1 || cfg.image_size % cfg.grid != 0) {
    throw ConfigError("synthesize: image_size must be a positive multiple of grid");
  }
  Rng master(seed);
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    Rng rng = master.fork(static_cast<std::uint64_t>(i));
    SyntheticSample s;
    s.id = i;
    s.seed = seed;
    s.condition = draw_condition(cfg.mix, rng);
    const int S = cfg.image_size;
    Canvas img(S);

    const bool cluttered = rng.uniform() < 0.5;
    const bool dark_visible = s.condition == SceneCondition::Night;
    const bool washed_visible = s.condition == SceneCondition::Overexposed;

    // Backgrounds. Night and day brightness ranges overlap heavily so the
    // regime is not trivially readable from global statistics.
    const double base_v = washed_visible ? rng.uniform(0.86, 0.93)
                          : dark_visible ? rng.uniform(0.36, 0.66)
                                         : rng.uniform(0.40, 0.75);
    const double base_t = rng.uniform(0.30, 0.60);
    const double gdx = rng.uniform(-1, 1), gdy = rng.uniform(-1, 1);
    const double gamp = rng.uniform(0.02, cluttered ? 0.10 : 0.05);
    const double noise_v = washed_visible ? 0.01 : cfg.noise;
    double tint[3] = {rng.uniform(0.95, 1.05), rng.uniform(0.95, 1.05), rng.uniform(0.95, 1.05)};
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const double grad = gamp * (gdx * x + gdy * y) / S;
        for (int c = 0; c < 3; ++c) {
          img.vis(c, y, x) = static_cast<real>(base_v * tint[c] + grad + rng.normal() * noise_v);
        }
        img.thm(y, x) = static_cast<real>(base_t + 0.5 * grad + rng.normal() * cfg.noise);
      }
    }

    // Soft lumps in both modalities. Their edges are too gentle to register as
    // structure, so local brightness stops being a reliable target cue.
    const int n_lumps = cluttered ? 6 + rng.uniform_int(5) : 2 + rng.uniform_int(3);
    for (int lump = 0; lump < n_lumps; ++lump) {
      const double cx = rng.uniform(0, S), cy = rng.uniform(0, S);
      const double radius = rng.uniform(5.0, 10.0);
      const double amp_v = rng.uniform(-cfg.clutter_amp, cfg.clutter_amp);
      const double amp_t = rng.uniform(-cfg.clutter_amp, cfg.clutter_amp);
      for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
          const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
          const double w = 1.0 / (1.0 + std::exp((d - radius) / 3.0));
          if (w < 1e-4) continue;
          for (int c = 0; c < 3; ++c) img.vis(c, y, x) += static_cast<real>(amp_v * w);
          img.thm(y, x) += static_cast<real>(amp_t * w);
        }
      }
    }

    // True targets.
    const int n_blobs = cfg.min_blobs + rng.uniform_int(cfg.max_blobs - cfg.min_blobs + 1);
    const double margin = 5.0;
    for (int b = 0; b < n_blobs; ++b) {
      Blob blob;
      blob.cx = rng.uniform(margin, S - margin);
      blob.cy = rng.uniform(margin, S - margin);
      blob.radius = rng.uniform(cfg.blob_radius_lo, cfg.blob_radius_hi);
      blob.amplitude = rng.uniform(cfg.blob_amp_lo, cfg.blob_amp_hi);
      s.true_blobs.push_back(blob);
    }

    const bool visible_carries = s.condition == SceneCondition::Day ||
                                 s.condition == SceneCondition::ThermalCrossover;
    const bool thermal_carries = s.condition != SceneCondition::ThermalCrossover;
    const double blob_tint[3] = {rng.uniform(0.95, 1.1), rng.uniform(0.95, 1.1),
                                 rng.uniform(0.95, 1.1)};
    for (const Blob& b : s.true_blobs) {
      if (visible_carries) render_blob_visible(img, b, blob_tint);
      if (thermal_carries) render_blob_thermal(img, b);
    }

    // Sensor artifacts, count-matched to the true targets: night speckle in
    // the visible channel, residual crossover hot spots in the thermal one.
    // Placed away from true targets, never marked in the heatmap.
    const bool fakes_visible = s.condition == SceneCondition::Night;
    const bool fakes_thermal = s.condition == SceneCondition::ThermalCrossover;
    if (fakes_visible || fakes_thermal) {
      const int n_fake = cfg.min_blobs + rng.uniform_int(cfg.max_blobs - cfg.min_blobs + 1);
      auto& store = fakes_visible ? s.visible_fake_blobs : s.thermal_fake_blobs;
      int attempts = 0;
      while (static_cast<int>(store.size()) < n_fake && attempts < 200) {
        ++attempts;
        Blob fake;
        fake.cx = rng.uniform(margin, S - margin);
        fake.cy = rng.uniform(margin, S - margin);
        fake.radius = rng.uniform(cfg.blob_radius_lo, cfg.blob_radius_hi);
        fake.amplitude = rng.uniform(cfg.blob_amp_lo, cfg.blob_amp_hi);
        bool clear = true;
        for (const Blob& b : s.true_blobs) {
          const double min_gap = fake.radius + b.radius + 2.0;
          if (std::hypot(fake.cx - b.cx, fake.cy - b.cy) < min_gap ||
              token_of(fake, S, cfg.grid) == token_of(b, S, cfg.grid)) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        store.push_back(fake);
        if (fakes_visible) {
          render_blob_visible(img, fake, blob_tint);
        } else {
          render_blob_thermal(img, fake);
        }
      }
    }

    for (auto& x : img.v) x = std::clamp(x, real(0), real(1));
    for (auto& x : img.t) x = std::clamp(x, real(0), real(1));

    s.heatmap.assign(static_cast<std::size_t>(cfg.grid) * cfg.grid, real(0));
    for (const Blob& b : s.true_blobs) {
      s.heatmap[static_cast<std::size_t>(token_of(b, S, cfg.grid))] = real(1);
    }

    s.caption = make_caption(s.condition, cluttered, n_blobs, cfg.policy, rng);
    s.visible = Tensor::from_data({3, S, S}, std::move(img.v));
    s.thermal = Tensor::from_data({1, S, S}, std::move(img.t));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace slg
