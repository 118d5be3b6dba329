// Copyright (c) 2026 The adaspeech4-desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <fnmatch.h>

#include <map>
#include <random>
#include <string>
#include <vector>

#include "adaspeech4/tensor.hpp"

namespace adaspeech4 {

struct ParameterEntry {
  Tensor value;
  bool trainable = true;
};

/// Named parameter tensors for the whole model. Iteration order is the
/// lexicographic name order, which keeps checkpoints and updates deterministic.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value, bool trainable = true) {
    entries_[name] = ParameterEntry{std::move(value), trainable};
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& get(const std::string& name) const { return entry(name).value; }
  Tensor& get_mut(const std::string& name) { return entry(name).value; }

  bool trainable(const std::string& name) const { return entry(name).trainable; }
  void set_trainable(const std::string& name, bool t) { entry(name).trainable = t; }

  /// Marks every tensor whose name matches one of the globs as frozen.
  void freeze(const std::vector<std::string>& patterns) {
    for (auto& [name, e] : entries_) {
      if (matches_any(name, patterns)) e.trainable = false;
    }
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) {
      if (e.trainable) out.push_back(name);
    }
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
  }

  const std::map<std::string, ParameterEntry>& entries() const { return entries_; }
  std::map<std::string, ParameterEntry>& entries() { return entries_; }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    auto it = b.entries_.begin();
    for (const auto& [name, e] : a.entries_) {
      if (it->first != name || it->second.trainable != e.trainable ||
          !bit_identical(it->second.value, e.value)) {
        return false;
      }
      ++it;
    }
    return true;
  }

  static bool matches_any(const std::string& name, const std::vector<std::string>& patterns) {
    for (const auto& p : patterns) {
      if (fnmatch(p.c_str(), name.c_str(), 0) == 0) return true;
    }
    return false;
  }

 private:
  ParameterEntry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const ParameterEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, ParameterEntry> entries_;
};

/// Uniform Glorot initialization for a fan_in x fan_out matrix.
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
                             double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t({fan_in, fan_out});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace adaspeech4
