#include "slg/pgm.hpp"

#include <algorithm>
#include <fstream>

#include "slg/errors.hpp"

namespace slg {

void write_pgm(const std::string& path, const std::vector<real>& data, int h, int w) {
  if (static_cast<long long>(data.size()) != static_cast<long long>(h) * w) {
    throw ShapeError("write_pgm: size mismatch");
  }
  real lo = data[0], hi = data[0];
  for (real x : data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const real span = hi - lo > 0 ? hi - lo : real(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (real x : data) {
    const int v = static_cast<int>(real(255) * (x - lo) / span + real(0.5));
    os.put(static_cast<char>(std::clamp(v, 0, 255)));
  }
  if (!os) throw IoError("write failed: " + path);
}

void write_pgm01(const std::string& path, const std::vector<real>& data, int h, int w) {
  if (static_cast<long long>(data.size()) != static_cast<long long>(h) * w) {
    throw ShapeError("write_pgm01: size mismatch");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (real x : data) {
    const int v = static_cast<int>(real(255) * x + real(0.5));
    os.put(static_cast<char>(std::clamp(v, 0, 255)));
  }
  if (!os) throw IoError("write failed: " + path);
}

void write_ppm01(const std::string& path, const std::vector<real>& chw, int h, int w) {
  if (static_cast<long long>(chw.size()) != 3LL * h * w) {
    throw ShapeError("write_ppm01: expected 3*h*w values");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (long long i = 0; i < static_cast<long long>(h) * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      const real x = chw[static_cast<std::size_t>(c) * h * w + i];
      const int v = static_cast<int>(real(255) * x + real(0.5));
      os.put(static_cast<char>(std::clamp(v, 0, 255)));
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

namespace {

int read_pnm_int(std::istream& is) {
  // skips whitespace and '#' comments
  int c = is.get();
  while (is && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (is && c != '\n') c = is.get();
    }
    c = is.get();
  }
  int v = 0;
  bool any = false;
  while (is && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw IoError("pnm: malformed header");
  return v;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6')) throw IoError(path + ": expected binary P5/P6");
  const int channels = m1 == '5' ? 1 : 3;
  const int w = read_pnm_int(is);
  const int h = read_pnm_int(is);
  const int maxval = read_pnm_int(is);
  if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw IoError(path + ": truncated pixel data");
  // interleaved -> planar
  std::vector<real> out(raw.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        out[(static_cast<std::size_t>(c) * h + y) * w + x] =
            static_cast<real>(raw[(static_cast<std::size_t>(y) * w + x) * channels + c]) / real(255);
      }
    }
  }
  return Tensor::from_data({channels, h, w}, std::move(out));
}

}  // namespace slg
