#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slg/lgm.hpp"
#include "slg/rng.hpp"
#include "slg/tensor.hpp"

namespace slg {

// Latent scene regime. Night and overexposure corrupt the visible channel;
// thermal crossover removes the target signal from the thermal channel.
enum class SceneCondition { Day, Night, Overexposed, ThermalCrossover };

const char* condition_name(SceneCondition c);

enum class CaptionPolicy { Structured, FreeFormNoisy, CategoryList };

const char* policy_name(CaptionPolicy p);
CaptionPolicy parse_policy(const std::string& s);

struct Blob {
  double cx = 0, cy = 0;  // pixel coordinates
  double radius = 0;
  double amplitude = 0;
};

struct ConditionMix {
  double day = 0.30;
  double night = 0.35;
  double overexposed = 0.10;
  double thermal_crossover = 0.25;
};

struct SynthConfig {
  int image_size = 64;
  int grid = 8;  // token grid; heatmap has grid*grid entries
  int min_blobs = 2;
  int max_blobs = 5;
  double noise = 0.035;
  // Targets sit inside the clutter amplitude range and span patch boundaries:
  // brightness alone does not separate them, sharp edges do.
  double blob_amp_lo = 0.14;
  double blob_amp_hi = 0.22;
  double blob_radius_lo = 3.0;
  double blob_radius_hi = 5.5;
  // Soft background lumps: large radius, gentle falloff. They carry little
  // gradient energy, so brightness alone does not identify a target.
  double clutter_amp = 0.12;
  ConditionMix mix;
  CaptionPolicy policy = CaptionPolicy::Structured;
};

struct SyntheticSample {
  Tensor visible;  // [3,S,S] in [0,1]
  Tensor thermal;  // [1,S,S]
  std::vector<real> heatmap;  // grid*grid, 1 where a token holds a true blob center
  StructuredCaption caption;
  SceneCondition condition = SceneCondition::Day;
  std::vector<Blob> true_blobs;
  // Sensor artifacts, never marked in the heatmap: night speckle in the
  // visible channel, residual hot spots in the thermal channel at crossover.
  // Matched in count and rendering to the true targets, so which modality to
  // trust is a property of the latent condition, not of local appearance.
  std::vector<Blob> visible_fake_blobs;
  std::vector<Blob> thermal_fake_blobs;
  int id = 0;
  std::uint64_t seed = 0;
};

// Deterministic: sample i of a run is a pure function of (seed, i, config).
std::vector<SyntheticSample> synthesize(const SynthConfig& cfg, int n, std::uint64_t seed);

// Caption for a given condition/contents under a policy. Exposed separately so
// tests can probe the three policies directly.
StructuredCaption make_caption(SceneCondition condition, bool cluttered, int blob_count,
                               CaptionPolicy policy, Rng& rng);

}  // namespace slg
