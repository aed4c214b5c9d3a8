#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "sparsectl/corpus/types.hpp"

namespace sparsectl::corpus {

// The driving actor's rendition supplies pinned values and ground truth; the
// model synthesises in the target speaker's voice.
struct TransplantPair {
  int sentence_id = 0;
  int driving_actor = 0;
  int target_speaker = 0;

  friend bool operator==(const TransplantPair&, const TransplantPair&) = default;
};

struct TransplantPlan {
  std::vector<TransplantPair> pairs;
  std::vector<std::string> warnings;
};

// All ordered pairs of distinct rendition actors per test sentence, shuffled
// deterministically by `seed`.
inline TransplantPlan transplant_pairs(const Corpus& corpus, std::uint64_t seed) {
  TransplantPlan plan;
  for (int sid : corpus.split.test) {
    const auto rends = corpus.renditions_of(sid);
    if (rends.size() < 2) {
      plan.warnings.push_back("sentence " + std::to_string(sid) + " has " +
                              std::to_string(rends.size()) + " rendition(s); skipped");
      continue;
    }
    for (const auto* a : rends) {
      for (const auto* b : rends) {
        if (a->actor_id != b->actor_id) plan.pairs.push_back({sid, a->actor_id, b->actor_id});
      }
    }
  }
  Rng rng(seed);
  std::shuffle(plan.pairs.begin(), plan.pairs.end(), rng);
  return plan;
}

}  // namespace sparsectl::corpus
