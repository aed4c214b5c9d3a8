#pragma once

// A driving set is the user's sparse control input: K pinned feature values,
// each tagged with a phone position and a stream.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sparsectl/paf.hpp"

namespace sparsectl::model {

struct DrivingValue {
  int position = 0;
  Stream stream = Stream::f0;
  double value = 0.0;

  friend bool operator==(const DrivingValue&, const DrivingValue&) = default;
};

inline bool canonical_less(const DrivingValue& a, const DrivingValue& b) {
  if (a.position != b.position) return a.position < b.position;
  return stream_index(a.stream) < stream_index(b.stream);
}

class DrivingSet {
 public:
  DrivingSet() = default;
  DrivingSet(std::vector<DrivingValue> values) : values_(std::move(values)) {}  // NOLINT

  void add(int position, Stream stream, double value) { values_.push_back({position, stream, value}); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  const std::vector<DrivingValue>& values() const { return values_; }
  const DrivingValue& operator[](std::size_t i) const { return values_[i]; }

  // Throws InvalidInput on out-of-range positions, non-finite values,
  // duplicate (position, stream) entries or K > 3T.
  void validate(int T) const {
    if (T < 1) throw InvalidInput("sentence length must be >= 1");
    if (values_.size() > static_cast<std::size_t>(kNumStreams) * static_cast<std::size_t>(T)) {
      throw InvalidInput("driving set has K=" + std::to_string(values_.size()) + " > 3T=" +
                         std::to_string(kNumStreams * T));
    }
    for (const auto& v : values_) {
      if (v.position < 0 || v.position >= T) {
        throw InvalidInput("driving position " + std::to_string(v.position) + " outside [0, " +
                           std::to_string(T) + ")");
      }
      if (!std::isfinite(v.value)) {
        throw InvalidInput("non-finite driving value at position " + std::to_string(v.position));
      }
    }
    const auto order = canonical_order();
    for (std::size_t i = 1; i < order.size(); ++i) {
      const auto& a = values_[order[i - 1]];
      const auto& b = values_[order[i]];
      if (a.position == b.position && a.stream == b.stream) {
        throw InvalidInput("duplicate driving value at position " + std::to_string(a.position) +
                           " stream " + std::string(stream_name(a.stream)));
      }
    }
  }

  // Indices into values() sorted by (position, stream).
  std::vector<std::size_t> canonical_order() const {
    std::vector<std::size_t> idx(values_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return canonical_less(values_[a], values_[b]);
    });
    return idx;
  }

  DrivingSet canonical() const {
    std::vector<DrivingValue> out;
    out.reserve(values_.size());
    for (auto i : canonical_order()) out.push_back(values_[i]);
    return DrivingSet(std::move(out));
  }

 private:
  std::vector<DrivingValue> values_;
};

// Every value of a (normalized) sequence: K = 3T.
inline DrivingSet full_driving_set(const PafMatrix& paf) {
  DrivingSet ds;
  for (diff::Index t = 0; t < paf.rows(); ++t) {
    for (int s = 0; s < kNumStreams; ++s) ds.add(static_cast<int>(t), stream_from_index(s), paf(t, s));
  }
  return ds;
}

// Uniformly random subset of size k drawn from the 3T slots.
inline DrivingSet random_driving_set(const PafMatrix& paf, std::size_t k, Rng& rng) {
  const auto slots = static_cast<std::size_t>(paf.rows()) * kNumStreams;
  if (k > slots) throw InvalidInput("cannot draw " + std::to_string(k) + " of " + std::to_string(slots) + " slots");
  std::vector<std::size_t> idx(slots);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  DrivingSet ds;
  for (auto i : idx) {
    const auto t = static_cast<int>(i / kNumStreams);
    const auto s = static_cast<int>(i % kNumStreams);
    ds.add(t, stream_from_index(s), paf(t, s));
  }
  return ds;
}

}  // namespace sparsectl::model
