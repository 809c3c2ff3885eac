#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "skelcon/error.hpp"
#include "skelcon/rng.hpp"

namespace skelcon::nn {

/// Named parameter arrays packed into one flat buffer. Layers keep offsets
/// into the buffer, so a gradient is simply another buffer of the same size.
template <class T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    for (const auto& e : entries_)
      if (e.name == name) throw ContractError("duplicate parameter name '" + name + "'");
    Entry e;
    e.name = std::move(name);
    e.size = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    e.shape = std::move(shape);
    e.offset = values_.size();
    values_.resize(values_.size() + e.size, T(0));
    entries_.push_back(std::move(e));
    return entries_.back().offset;
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::size_t size() const { return values_.size(); }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }
  std::span<T> view(const Entry& e) { return {values_.data() + e.offset, e.size}; }
  std::span<const T> view(const Entry& e) const { return {values_.data() + e.offset, e.size}; }
  const std::vector<Entry>& entries() const { return entries_; }

  bool same_layout(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::vector<T> values_;
};

/// Fills [offset, offset + count) with U(-bound, bound) drawn in double.
template <class T>
void fill_uniform(ParamSet<T>& p, std::size_t offset, std::size_t count, double bound, Rng& rng) {
  T* v = p.data() + offset;
  for (std::size_t i = 0; i < count; ++i) v[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
bool all_finite(std::span<const T> v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace skelcon::nn
