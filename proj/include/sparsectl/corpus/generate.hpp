#pragma once

// Parametric multi-speaker prosody generator.
//
// F0 (in speaker range units):
//   g(t) = offset + slope * (t/(T-1) - 1/2) + sum_j A_j * bump(t - p_j) + phone_f0[id_t] + noise
// where the accent amplitudes A_j depend on style, speaker and a per-rendition
// gain. Offset, slope, accent gain, tempo and energy offset are drawn per
// rendition, so one actor's take differs from another's mostly globally. Energy mixes g with an independent component so that the two
// streams correlate at roughly `energy_f0_correlation`. Durations are lognormal
// with phrase-final lengthening.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "sparsectl/corpus/types.hpp"

namespace sparsectl::corpus {

namespace detail {

struct PhoneTraits {
  bool vowel = false;
  double f0 = 0.0;
  double energy = 0.0;
  double duration_ms = 80.0;
};

struct SpeakerTraits {
  double base_hz = 150.0;
  double range_hz = 30.0;
  double energy_db = 60.0;
  double energy_range_db = 6.0;
  double tempo = 1.0;
  double slope = -0.6;
  double accent = 1.0;
  double offset = 0.0;
};

struct StyleTraits {
  double accent = 1.0;
  double tempo = 1.0;
  double range = 1.0;
  double energy = 0.0;
};

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline void validate(const CorpusProfile& p) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw InvalidInput("infeasible corpus profile: " + msg);
  };
  need(p.speakers >= 1, "speakers must be >= 1");
  need(p.styles >= 1, "styles must be >= 1");
  need(p.vocab_size >= 6, "vocab_size must be >= 6");
  need(p.renditions_per_test >= 1, "renditions_per_test must be >= 1");
  need(p.renditions_per_test <= p.speakers,
       "R=" + std::to_string(p.renditions_per_test) + " exceeds speakers=" +
           std::to_string(p.speakers));
  need(p.train_renditions >= 1 && p.train_renditions <= p.speakers,
       "train_renditions must lie in [1, speakers]");
  need(p.min_length >= 3 && p.min_length <= p.max_length, "need 3 <= min_length <= max_length");
  need(p.test_sentences >= 0 && p.val_sentences >= 0, "split sizes must be non-negative");
  need(p.test_sentences + p.val_sentences < p.sentences,
       "test + val sentences must leave at least one training sentence");
  need(p.actor_variation >= 0.0, "actor_variation must be >= 0");
  need(p.energy_f0_correlation >= -1.0 && p.energy_f0_correlation <= 1.0,
       "energy_f0_correlation must lie in [-1, 1]");
  need(p.f0_noise >= 0 && p.energy_noise >= 0 && p.duration_noise >= 0,
       "noise scales must be >= 0");
}

// Phone 0 is silence. Of the remaining ids roughly the first 35% are vowels,
// and the first half of those carry lexical stress.
struct PhoneInventory {
  std::vector<PhoneTraits> traits;
  std::vector<int> stressed, unstressed, consonants;

  const PhoneTraits& operator[](int id) const { return traits[static_cast<std::size_t>(id)]; }
};

inline PhoneInventory make_phones(const CorpusProfile& p, Rng& rng) {
  PhoneInventory inv;
  inv.traits.resize(static_cast<std::size_t>(p.vocab_size));
  const int vowels_end = 1 + std::max(2, static_cast<int>(0.35 * (p.vocab_size - 1)));
  const int stressed_end = 1 + (vowels_end - 1) / 2;
  for (int i = 0; i < p.vocab_size; ++i) {
    auto& ph = inv.traits[static_cast<std::size_t>(i)];
    if (i == 0) {
      ph = {false, 0.0, -2.0, 180.0};
      continue;
    }
    ph.vowel = i < vowels_end;
    ph.f0 = normal(rng, 0.0, 0.25);
    ph.energy = (ph.vowel ? 0.6 : -0.4) + normal(rng, 0.0, 0.25);
    ph.duration_ms = (ph.vowel ? 95.0 : 65.0) * std::exp(normal(rng, 0.0, 0.2));
    (i < stressed_end ? inv.stressed : ph.vowel ? inv.unstressed : inv.consonants).push_back(i);
  }
  return inv;
}

inline std::vector<SpeakerTraits> make_speakers(const CorpusProfile& p, Rng& rng) {
  std::vector<SpeakerTraits> out(static_cast<std::size_t>(p.speakers));
  for (auto& s : out) {
    s.base_hz = uniform(rng, 90.0, 230.0);
    s.range_hz = s.base_hz * uniform(rng, 0.15, 0.3);
    s.energy_db = uniform(rng, 55.0, 70.0);
    s.energy_range_db = uniform(rng, 4.0, 8.0);
    s.tempo = uniform(rng, 0.85, 1.2);
    s.slope = normal(rng, -0.8, 0.15);
    s.accent = uniform(rng, 0.85, 1.15);
    s.offset = normal(rng, 0.0, 0.4);
  }
  return out;
}

inline std::vector<StyleTraits> make_styles(const CorpusProfile& p, Rng& rng) {
  std::vector<StyleTraits> out(static_cast<std::size_t>(p.styles));
  for (auto& s : out) {
    s.accent = uniform(rng, 0.6, 1.6);
    s.tempo = uniform(rng, 0.85, 1.15);
    s.range = uniform(rng, 0.8, 1.3);
    s.energy = normal(rng, 0.0, 0.5);
  }
  return out;
}

struct SentencePlan {
  SentenceSpec spec;
  std::vector<int> stressed;  // accent positions
};

inline SentencePlan make_sentence(int id, const CorpusProfile& p, const PhoneInventory& phones, Rng& rng) {
  SentencePlan plan;
  auto& s = plan.spec;
  s.id = id;
  s.style_id = uniform_int(rng, 0, p.styles - 1);
  const int T = uniform_int(rng, p.min_length, p.max_length);
  s.phone_ids.assign(static_cast<std::size_t>(T), 0);
  s.token_flags.assign(static_cast<std::size_t>(T), 0);
  auto pick = [&](const std::vector<int>& v) { return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(v.size()) - 1))]; };

  // Leading and trailing silence; words of 2-5 phones in between, each with
  // one stressed vowel. Punctuation inserts a pause (silence phone).
  s.token_flags[0] = kSilence | kSentenceStart;
  s.token_flags[static_cast<std::size_t>(T - 1)] = kSilence | kSentenceEnd | kPunctuation;
  int t = 1;
  while (t < T - 1) {
    const int len = std::min(uniform_int(rng, 2, 5), T - 1 - t);
    const int stress = t + uniform_int(rng, 0, len - 1);
    for (int k = t; k < t + len; ++k) {
      const bool vowel = uniform(rng, 0.0, 1.0) < 0.35;
      s.phone_ids[static_cast<std::size_t>(k)] =
          k == stress ? pick(phones.stressed) : pick(vowel ? phones.unstressed : phones.consonants);
    }
    s.token_flags[static_cast<std::size_t>(t)] |= kWordBoundary;
    plan.stressed.push_back(stress);
    t += len;
    if (t < T - 2 && uniform(rng, 0.0, 1.0) < 0.2) {
      s.token_flags[static_cast<std::size_t>(t - 1)] |= kPunctuation;
      s.token_flags[static_cast<std::size_t>(t)] |= kSilence;
      ++t;  // phone_ids[t] stays 0
    }
  }
  return plan;
}

inline PafMatrix render(const SentencePlan& plan, const CorpusProfile& p,
                        const PhoneInventory& phones, const SpeakerTraits& spk,
                        const StyleTraits& sty, Rng& rng) {
  const auto& s = plan.spec;
  const int T = s.length();
  const double v = p.actor_variation / 0.5;

  // Rendition-level factors.
  const double offset = spk.offset + normal(rng, 0.0, 0.5 * v);
  const double slope = spk.slope + normal(rng, 0.0, 0.6 * v);
  const double accent_gain = std::exp(normal(rng, 0.0, 0.3 * v));
  const double tempo = std::exp(normal(rng, 0.0, 0.12 * v));
  const double energy_offset = normal(rng, 0.0, 0.5 * v);
  const double rho = p.energy_f0_correlation;
  const double indep = std::sqrt(std::max(0.0, 1.0 - rho * rho));

  std::vector<double> accent(static_cast<std::size_t>(T), 0.0);
  for (int j : plan.stressed) {
    const double amp = sty.accent * spk.accent * accent_gain;
    for (int k = 0; k < T; ++k) {
      const double d = static_cast<double>(k - j);
      accent[static_cast<std::size_t>(k)] += amp * std::exp(-d * d / 2.0);
    }
  }

  PafMatrix out(T, kNumStreams);
  for (int k = 0; k < T; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const auto& ph = phones[s.phone_ids[uk]];
    const double rel = T > 1 ? static_cast<double>(k) / (T - 1) : 0.0;
    const double g = offset + slope * (rel - 0.5) + accent[uk] + ph.f0 + normal(rng, 0.0, p.f0_noise);
    const double e_ind = energy_offset + ph.energy + sty.energy + normal(rng, 0.0, p.energy_noise);
    const double e = rho * g + indep * e_ind;
    const bool final_pos = (s.token_flags[uk] & kPunctuation) != 0;
    const double lengthen = (final_pos ? 1.6 : 1.0) * (1.0 + 0.2 * std::min(accent[uk], 2.0));
    const double dur = ph.duration_ms * spk.tempo * sty.tempo * tempo * lengthen *
                       std::exp(normal(rng, 0.0, p.duration_noise));
    out(k, 0) = spk.base_hz + spk.range_hz * sty.range * g;
    out(k, 1) = spk.energy_db + spk.energy_range_db * e;
    out(k, 2) = dur;
  }
  return out;
}

}  // namespace detail

// Deterministic given (seed, profile). Renditions come back sorted by
// (sentence_id, actor_id); raw units are Hz, dB and milliseconds.
inline Corpus generate_corpus(std::uint64_t seed, const CorpusProfile& profile) {
  detail::validate(profile);
  Rng rng(seed);
  const auto phones = detail::make_phones(profile, rng);
  const auto speakers = detail::make_speakers(profile, rng);
  const auto styles = detail::make_styles(profile, rng);

  Corpus c;
  c.profile = profile;
  c.seed = seed;

  std::vector<detail::SentencePlan> plans;
  plans.reserve(static_cast<std::size_t>(profile.sentences));
  for (int i = 0; i < profile.sentences; ++i) plans.push_back(detail::make_sentence(i, profile, phones, rng));

  std::vector<int> order(static_cast<std::size_t>(profile.sentences));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& spec = plans[static_cast<std::size_t>(order[i])].spec;
    const auto n_test = static_cast<std::size_t>(profile.test_sentences);
    const auto n_val = static_cast<std::size_t>(profile.val_sentences);
    spec.split = i < n_test ? Split::test : (i < n_test + n_val ? Split::val : Split::train);
  }

  std::vector<int> actors(static_cast<std::size_t>(profile.speakers));
  std::iota(actors.begin(), actors.end(), 0);
  int round_robin = 0;
  for (const auto& plan : plans) {
    std::vector<int> chosen;
    switch (plan.spec.split) {
      case Split::test: {
        std::shuffle(actors.begin(), actors.end(), rng);
        chosen.assign(actors.begin(), actors.begin() + profile.renditions_per_test);
        break;
      }
      case Split::val:
        chosen.push_back(detail::uniform_int(rng, 0, profile.speakers - 1));
        break;
      case Split::train:
        for (int r = 0; r < profile.train_renditions; ++r) {
          chosen.push_back(round_robin % profile.speakers);
          ++round_robin;
        }
        break;
    }
    std::sort(chosen.begin(), chosen.end());
    for (int a : chosen) {
      Rendition r;
      r.sentence_id = plan.spec.id;
      r.actor_id = a;
      r.paf.values = detail::render(plan, profile, phones, speakers[static_cast<std::size_t>(a)],
                                    styles[static_cast<std::size_t>(plan.spec.style_id)], rng);
      c.renditions.push_back(std::move(r));
    }
    c.sentences.push_back(plan.spec);
  }
  c.split = split_from_sentences(c.sentences, profile.renditions_per_test);
  return c;
}

}  // namespace sparsectl::corpus
