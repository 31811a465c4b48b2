#include "slg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace slg {

namespace {

constexpr char kMagic[8] = {'S', 'L', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_i64(std::ostream& os, std::int64_t v) {
  unsigned char b[8];
  const auto u = static_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  write_i64(os, static_cast<std::int64_t>(u));
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::int64_t read_i64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<std::int64_t>(v);
}

double read_f64(std::istream& is) {
  const std::uint64_t u = static_cast<std::uint64_t>(read_i64(is));
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

std::map<std::string, std::vector<real>> Checkpoint::state() const {
  std::map<std::string, std::vector<real>> s;
  for (const auto& e : entries) s[e.name] = e.data;
  return s;
}

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& config_json) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(config_json.size()));
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  write_u32(os, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    write_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    os.put(e.label == ParamLabel::Frozen ? '\0' : '\1');
    write_u32(os, static_cast<std::uint32_t>(e.stage));
    write_u32(os, static_cast<std::uint32_t>(e.tensor.shape().size()));
    for (int d : e.tensor.shape()) write_i64(os, d);
  }
  for (const auto& e : params.entries()) {
    for (real x : e.tensor.data()) write_f64(os, static_cast<double>(x));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint file: " + path);
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) throw IoError("unsupported checkpoint version");
  Checkpoint ck;
  const std::uint32_t cfg_len = read_u32(is);
  ck.config_json.resize(cfg_len);
  is.read(ck.config_json.data(), cfg_len);
  const std::uint32_t count = read_u32(is);
  ck.entries.resize(count);
  for (auto& e : ck.entries) {
    const std::uint32_t name_len = read_u32(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const int label = is.get();
    if (label != 0 && label != 1) throw IoError("checkpoint: bad partition label");
    e.label = label == 0 ? ParamLabel::Frozen : ParamLabel::Adapter;
    e.stage = static_cast<int>(read_u32(is));
    const std::uint32_t ndim = read_u32(is);
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = static_cast<int>(read_i64(is));
  }
  for (auto& e : ck.entries) {
    e.data.resize(static_cast<std::size_t>(numel(e.shape)));
    for (auto& x : e.data) x = static_cast<real>(read_f64(is));
  }
  if (!is) throw IoError("checkpoint: truncated data section");
  return ck;
}

}  // namespace slg
