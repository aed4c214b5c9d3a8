#pragma once

// Prosodic acoustic features: one (F0, energy, duration) triple per phone.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "sparsectl/diff/graph.hpp"
#include "sparsectl/error.hpp"

namespace sparsectl {

using diff::Rng;

// Stream order is fixed everywhere: column 0 = F0, 1 = energy, 2 = duration.
enum class Stream : std::uint8_t { f0 = 0, energy = 1, duration = 2 };

inline constexpr int kNumStreams = 3;
inline constexpr std::array<Stream, kNumStreams> kStreams{Stream::f0, Stream::energy,
                                                          Stream::duration};

inline constexpr int stream_index(Stream s) { return static_cast<int>(s); }

inline std::string_view stream_name(Stream s) {
  switch (s) {
    case Stream::f0:
      return "f0";
    case Stream::energy:
      return "energy";
    case Stream::duration:
      return "duration";
  }
  return "?";
}

inline Stream parse_stream(std::string_view name) {
  if (name == "f0" || name == "F0") return Stream::f0;
  if (name == "energy") return Stream::energy;
  if (name == "duration" || name == "dur") return Stream::duration;
  throw InvalidInput("unknown stream '" + std::string(name) + "' (expected f0|energy|duration)");
}

inline Stream stream_from_index(int i) {
  if (i < 0 || i >= kNumStreams) throw InvalidInput("stream index out of range: " + std::to_string(i));
  return static_cast<Stream>(i);
}

enum class Normalization { raw, per_speaker };

// T x 3 matrix of feature values.
using PafMatrix = diff::Matrix<double>;

struct PafSequence {
  PafMatrix values;
  Normalization normalization = Normalization::raw;

  diff::Index length() const { return values.rows(); }
};

}  // namespace sparsectl
