#pragma once

#include <string>
#include <vector>

#include "slg/tensor.hpp"

namespace slg {

enum class ParamLabel { Frozen, Adapter };

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamLabel label = ParamLabel::Adapter;
  int stage = 0;  // depth index used by layer-wise LR decay
};

// Flat list of every parameter in a model. The partition must be total: each
// parameter is registered exactly once, with a label and a stage depth.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor t, ParamLabel label, int stage) {
    for (const auto& e : entries_) {
      if (e.name == name) throw ConfigError("duplicate parameter name: " + name);
    }
    entries_.push_back(ParamEntry{std::move(name), std::move(t), label, stage});
    return entries_.back().tensor;
  }

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  long long count_total() const {
    long long n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  long long count_label(ParamLabel label) const {
    long long n = 0;
    for (const auto& e : entries_) {
      if (e.label == label) n += e.tensor.size();
    }
    return n;
  }

  int max_stage() const {
    int m = 0;
    for (const auto& e : entries_) m = std::max(m, e.stage);
    return m;
  }

  const ParamEntry* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  ParamEntry* find(const std::string& name) {
    for (auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

 private:
  std::vector<ParamEntry> entries_;
};

}  // namespace slg
