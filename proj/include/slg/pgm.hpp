#pragma once

#include <string>
#include <vector>

#include "slg/real.hpp"
#include "slg/tensor.hpp"

namespace slg {

// 8-bit binary PGM (P5), min-max normalized over the map.
void write_pgm(const std::string& path, const std::vector<real>& data, int h, int w);

// 8-bit P5/P6 with values taken as already lying in [0,1] (no normalization).
void write_pgm01(const std::string& path, const std::vector<real>& data, int h, int w);
void write_ppm01(const std::string& path, const std::vector<real>& chw, int h, int w);

// Reads binary P5 (1 channel) or P6 (3 channels), maxval 255, into [C,H,W]
// values in [0,1].
Tensor read_pnm(const std::string& path);

}  // namespace slg
