#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sparsectl/paf.hpp"

namespace sparsectl::corpus {

enum class Split { train, val, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidInput("unknown split '" + std::string(s) + "'");
}

// Bit flags per phone position.
enum TokenFlag : std::uint8_t {
  kPunctuation = 1u << 0,
  kSilence = 1u << 1,
  kWordBoundary = 1u << 2,
  kSentenceStart = 1u << 3,
  kSentenceEnd = 1u << 4,
};

struct SentenceSpec {
  int id = 0;
  std::vector<int> phone_ids;
  int style_id = 0;
  std::vector<std::uint8_t> token_flags;
  Split split = Split::train;

  int length() const { return static_cast<int>(phone_ids.size()); }
};

struct Rendition {
  int sentence_id = 0;
  int actor_id = 0;
  PafSequence paf;
};

struct StreamStats {
  double mean = 0.0;
  double std = 1.0;
};

// Per-speaker, per-stream moments used for mean-variance normalisation.
struct SpeakerStats {
  std::map<int, std::array<StreamStats, kNumStreams>> speakers;

  const std::array<StreamStats, kNumStreams>& at(int speaker) const {
    auto it = speakers.find(speaker);
    if (it == speakers.end()) {
      throw InvalidInput("no normalisation statistics for speaker " + std::to_string(speaker));
    }
    return it->second;
  }
};

struct CorpusProfile {
  std::string name = "desk";
  int sentences = 240;
  int speakers = 8;
  int styles = 3;
  int vocab_size = 40;
  int test_sentences = 20;
  int val_sentences = 20;
  int renditions_per_test = 8;  // R
  int train_renditions = 8;  // every speaker renders every training sentence
  int min_length = 10;
  int max_length = 24;
  // Rendition-level variation relative to the default scale (0.5 = default).
  double actor_variation = 0.5;
  double energy_f0_correlation = 0.6;
  double f0_noise = 0.10;
  double energy_noise = 0.10;
  double duration_noise = 0.06;

  static CorpusProfile desk() { return {}; }

  static CorpusProfile paper() {
    CorpusProfile p;
    p.name = "paper";
    p.sentences = 2000;
    p.speakers = 30;
    p.styles = 7;
    p.vocab_size = 60;
    p.test_sentences = 182;
    p.val_sentences = 100;
    p.renditions_per_test = 10;
    p.train_renditions = 1;
    p.min_length = 60;
    p.max_length = 100;
    return p;
  }

  static CorpusProfile named(std::string_view name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw InvalidInput("unknown corpus profile '" + std::string(name) + "' (expected desk|paper)");
  }
};

struct CorpusSplit {
  std::vector<int> train, val, test;
  int renditions_per_test = 0;
};

struct Corpus {
  CorpusProfile profile;
  std::uint64_t seed = 0;
  std::vector<SentenceSpec> sentences;  // indexed by sentence id
  std::vector<Rendition> renditions;    // sorted by (sentence_id, actor_id)
  CorpusSplit split;

  const SentenceSpec& sentence(int id) const {
    if (id < 0 || id >= static_cast<int>(sentences.size())) {
      throw InvalidInput("unknown sentence id " + std::to_string(id));
    }
    return sentences[static_cast<std::size_t>(id)];
  }

  std::vector<const Rendition*> renditions_of(int sentence_id) const {
    std::vector<const Rendition*> out;
    auto lo = std::lower_bound(renditions.begin(), renditions.end(), sentence_id,
                               [](const Rendition& r, int id) { return r.sentence_id < id; });
    for (; lo != renditions.end() && lo->sentence_id == sentence_id; ++lo) out.push_back(&*lo);
    return out;
  }

  const Rendition& rendition(int sentence_id, int actor_id) const {
    for (const auto* r : renditions_of(sentence_id)) {
      if (r->actor_id == actor_id) return *r;
    }
    throw InvalidInput("no rendition of sentence " + std::to_string(sentence_id) + " by actor " +
                       std::to_string(actor_id));
  }
};

inline CorpusSplit split_from_sentences(const std::vector<SentenceSpec>& sentences,
                                        int renditions_per_test) {
  CorpusSplit s;
  s.renditions_per_test = renditions_per_test;
  for (const auto& sent : sentences) {
    switch (sent.split) {
      case Split::train:
        s.train.push_back(sent.id);
        break;
      case Split::val:
        s.val.push_back(sent.id);
        break;
      case Split::test:
        s.test.push_back(sent.id);
        break;
    }
  }
  return s;
}

}  // namespace sparsectl::corpus
