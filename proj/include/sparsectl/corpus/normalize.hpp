#pragma once

#include <cmath>
#include <vector>

#include "sparsectl/corpus/types.hpp"

namespace sparsectl::corpus {

// Per-speaker moments over training renditions only (population std).
inline SpeakerStats compute_stats(const Corpus& corpus) {
  struct Acc {
    double n = 0, sum[kNumStreams] = {0, 0, 0}, sq[kNumStreams] = {0, 0, 0};
  };
  std::map<int, Acc> acc;
  for (const auto& r : corpus.renditions) {
    if (corpus.sentence(r.sentence_id).split != Split::train) continue;
    if (r.paf.normalization != Normalization::raw) {
      throw InvalidInput("statistics must be computed on raw renditions");
    }
    auto& a = acc[r.actor_id];
    for (diff::Index t = 0; t < r.paf.length(); ++t) {
      for (int s = 0; s < kNumStreams; ++s) {
        const double x = r.paf.values(t, s);
        a.sum[s] += x;
        a.sq[s] += x * x;
      }
      a.n += 1;
    }
  }
  SpeakerStats stats;
  for (const auto& [spk, a] : acc) {
    auto& out = stats.speakers[spk];
    for (int s = 0; s < kNumStreams; ++s) {
      const double mean = a.sum[s] / a.n;
      const double var = std::max(0.0, a.sq[s] / a.n - mean * mean);
      const double sd = std::sqrt(var);
      out[static_cast<std::size_t>(s)] = {mean, sd > 1e-8 ? sd : 1.0};
    }
  }
  return stats;
}

inline PafSequence normalize(const PafSequence& paf, int speaker, const SpeakerStats& stats) {
  if (paf.normalization != Normalization::raw) throw InvalidInput("sequence is already normalized");
  const auto& st = stats.at(speaker);
  PafSequence out{paf.values, Normalization::per_speaker};
  for (int s = 0; s < kNumStreams; ++s) {
    const auto& m = st[static_cast<std::size_t>(s)];
    out.values.col(s) = (out.values.col(s).array() - m.mean) / m.std;
  }
  return out;
}

inline PafSequence denormalize(const PafSequence& paf, int speaker, const SpeakerStats& stats) {
  if (paf.normalization != Normalization::per_speaker) throw InvalidInput("sequence is not normalized");
  const auto& st = stats.at(speaker);
  PafSequence out{paf.values, Normalization::raw};
  for (int s = 0; s < kNumStreams; ++s) {
    const auto& m = st[static_cast<std::size_t>(s)];
    out.values.col(s) = out.values.col(s).array() * m.std + m.mean;
  }
  return out;
}

inline std::vector<Rendition> normalize(const std::vector<Rendition>& renditions,
                                        const SpeakerStats& stats) {
  std::vector<Rendition> out;
  out.reserve(renditions.size());
  for (const auto& r : renditions) out.push_back({r.sentence_id, r.actor_id, normalize(r.paf, r.actor_id, stats)});
  return out;
}

inline std::vector<Rendition> denormalize(const std::vector<Rendition>& renditions,
                                          const SpeakerStats& stats) {
  std::vector<Rendition> out;
  out.reserve(renditions.size());
  for (const auto& r : renditions) out.push_back({r.sentence_id, r.actor_id, denormalize(r.paf, r.actor_id, stats)});
  return out;
}

// Copy of the corpus with every rendition normalised.
inline Corpus normalized(const Corpus& corpus, const SpeakerStats& stats) {
  Corpus c = corpus;
  c.renditions = normalize(corpus.renditions, stats);
  return c;
}

}  // namespace sparsectl::corpus
