#pragma once

#include <map>
#include <string>
#include <vector>

#include "slg/params.hpp"

namespace slg {

// Flat binary checkpoint: magic + version + embedded config JSON + a shape
// table (name, partition label, stage, dims per parameter), followed by all
// values as row-major 64-bit floats, little-endian.
struct CheckpointEntry {
  std::string name;
  ParamLabel label = ParamLabel::Adapter;
  int stage = 0;
  Shape shape;
  std::vector<real> data;
};

struct Checkpoint {
  std::string config_json;
  std::vector<CheckpointEntry> entries;

  std::map<std::string, std::vector<real>> state() const;
};

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& config_json);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace slg
