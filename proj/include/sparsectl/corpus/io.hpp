#pragma once

// On-disk corpus: a directory holding
//   corpus.jsonl  one record per rendition, raw units
//   stats.json    per-speaker normalisation moments
//   profile.json  generation profile, seed and record count

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>

#include "json.hpp"

#include "sparsectl/corpus/types.hpp"
#include "sparsectl/util/files.hpp"

namespace sparsectl::corpus {

inline constexpr int kCorpusFormatVersion = 1;

using ojson = nlohmann::ordered_json;

inline ojson profile_to_json(const CorpusProfile& p) {
  return ojson{{"name", p.name},
               {"sentences", p.sentences},
               {"speakers", p.speakers},
               {"styles", p.styles},
               {"vocab_size", p.vocab_size},
               {"test_sentences", p.test_sentences},
               {"val_sentences", p.val_sentences},
               {"renditions_per_test", p.renditions_per_test},
               {"train_renditions", p.train_renditions},
               {"min_length", p.min_length},
               {"max_length", p.max_length},
               {"actor_variation", p.actor_variation},
               {"energy_f0_correlation", p.energy_f0_correlation},
               {"f0_noise", p.f0_noise},
               {"energy_noise", p.energy_noise},
               {"duration_noise", p.duration_noise}};
}

// Missing keys keep the base profile's value.
inline CorpusProfile profile_from_json(const nlohmann::json& j, CorpusProfile p = {}) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("name", p.name);
  get("sentences", p.sentences);
  get("speakers", p.speakers);
  get("styles", p.styles);
  get("vocab_size", p.vocab_size);
  get("test_sentences", p.test_sentences);
  get("val_sentences", p.val_sentences);
  get("renditions_per_test", p.renditions_per_test);
  get("train_renditions", p.train_renditions);
  get("min_length", p.min_length);
  get("max_length", p.max_length);
  get("actor_variation", p.actor_variation);
  get("energy_f0_correlation", p.energy_f0_correlation);
  get("f0_noise", p.f0_noise);
  get("energy_noise", p.energy_noise);
  get("duration_noise", p.duration_noise);
  return p;
}

inline ojson stats_to_json(const SpeakerStats& stats) {
  ojson j = ojson::object();
  for (const auto& [spk, streams] : stats.speakers) {
    ojson s = ojson::object();
    for (int i = 0; i < kNumStreams; ++i) {
      const auto& m = streams[static_cast<std::size_t>(i)];
      s[std::string(stream_name(stream_from_index(i)))] = ojson{{"mean", m.mean}, {"std", m.std}};
    }
    j[std::to_string(spk)] = std::move(s);
  }
  return j;
}

inline SpeakerStats stats_from_json(const nlohmann::json& j) {
  SpeakerStats stats;
  try {
    for (const auto& [key, streams] : j.items()) {
      const int spk = std::stoi(key);
      auto& out = stats.speakers[spk];
      for (int i = 0; i < kNumStreams; ++i) {
        const auto& m = streams.at(std::string(stream_name(stream_from_index(i))));
        out[static_cast<std::size_t>(i)] = {m.at("mean").get<double>(), m.at("std").get<double>()};
        if (!(out[static_cast<std::size_t>(i)].std > 0.0)) {
          throw FormatError("stats: non-positive std for speaker " + key);
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("stats: malformed: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("stats: malformed speaker key: ") + e.what());
  }
  return stats;
}

inline std::string rendition_record(const SentenceSpec& s, const Rendition& r) {
  if (r.paf.normalization != Normalization::raw) {
    throw InvalidInput("corpus files hold raw values; denormalize before saving");
  }
  ojson paf = ojson::array();
  for (diff::Index t = 0; t < r.paf.length(); ++t) {
    paf.push_back(ojson::array({r.paf.values(t, 0), r.paf.values(t, 1), r.paf.values(t, 2)}));
  }
  ojson rec{{"format_version", kCorpusFormatVersion},
            {"sentence_id", r.sentence_id},
            {"actor_id", r.actor_id},
            {"style_id", s.style_id},
            {"phone_ids", s.phone_ids},
            {"paf", std::move(paf)},
            {"split", split_name(s.split)},
            {"token_flags", s.token_flags}};
  return rec.dump();
}

inline void save_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                        const SpeakerStats& stats) {
  std::string lines;
  for (const auto& r : corpus.renditions) {
    lines += rendition_record(corpus.sentence(r.sentence_id), r);
    lines += '\n';
  }
  ojson prof{{"format_version", kCorpusFormatVersion},
             {"seed", corpus.seed},
             {"records", corpus.renditions.size()},
             {"profile", profile_to_json(corpus.profile)}};
  std::filesystem::create_directories(dir);
  util::atomic_write(dir / "corpus.jsonl", lines);
  util::atomic_write(dir / "stats.json", stats_to_json(stats).dump(2) + "\n");
  util::atomic_write(dir / "profile.json", prof.dump(2) + "\n");
}

namespace detail {

inline void check_version(const nlohmann::json& j, const std::string& what, std::size_t record) {
  if (!j.contains("format_version")) throw FormatError(what + ": missing format_version", record);
  const int v = j.at("format_version").get<int>();
  if (v != kCorpusFormatVersion) {
    throw FormatError(what + ": format_version " + std::to_string(v) + " unsupported (expected " +
                          std::to_string(kCorpusFormatVersion) + ")",
                      record);
  }
}

inline void parse_record(const std::string& line, std::size_t index, const CorpusProfile& prof,
                         Corpus& c) {
  const auto where = "corpus record " + std::to_string(index);
  auto fail = [&](const std::string& msg) -> void { throw FormatError(where + ": " + msg, index); };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail(std::string("unparseable: ") + e.what());
  }
  try {
    check_version(j, where, index);
    SentenceSpec s;
    s.id = j.at("sentence_id").get<int>();
    s.style_id = j.at("style_id").get<int>();
    s.phone_ids = j.at("phone_ids").get<std::vector<int>>();
    s.split = parse_split(j.at("split").get<std::string>());
    if (j.contains("token_flags")) {
      s.token_flags = j.at("token_flags").get<std::vector<std::uint8_t>>();
    } else {
      s.token_flags.assign(s.phone_ids.size(), 0);
    }
    Rendition r;
    r.sentence_id = s.id;
    r.actor_id = j.at("actor_id").get<int>();
    const auto& paf = j.at("paf");
    const auto T = static_cast<diff::Index>(s.phone_ids.size());
    if (T < 1) fail("empty phone_ids");
    if (static_cast<diff::Index>(paf.size()) != T) {
      fail("paf has " + std::to_string(paf.size()) + " rows but phone_ids has " + std::to_string(T));
    }
    if (s.token_flags.size() != s.phone_ids.size()) fail("token_flags length differs from phone_ids");
    r.paf.values.resize(T, kNumStreams);
    for (diff::Index t = 0; t < T; ++t) {
      const auto& row = paf.at(static_cast<std::size_t>(t));
      if (row.size() != static_cast<std::size_t>(kNumStreams)) fail("paf row " + std::to_string(t) + " is not a triple");
      for (int k = 0; k < kNumStreams; ++k) {
        const double x = row.at(static_cast<std::size_t>(k)).get<double>();
        if (!std::isfinite(x)) fail("non-finite paf value at row " + std::to_string(t));
        r.paf.values(t, k) = x;
      }
      if (r.paf.values(t, 2) <= 0.0) fail("non-positive duration at row " + std::to_string(t));
    }
    if (s.id < 0 || s.id >= prof.sentences) fail("sentence_id " + std::to_string(s.id) + " out of range");
    if (r.actor_id < 0 || r.actor_id >= prof.speakers) fail("actor_id " + std::to_string(r.actor_id) + " out of range");
    if (s.style_id < 0 || s.style_id >= prof.styles) fail("style_id " + std::to_string(s.style_id) + " out of range");
    for (int id : s.phone_ids) {
      if (id < 0 || id >= prof.vocab_size) fail("phone id " + std::to_string(id) + " out of range");
    }

    auto& slot = c.sentences[static_cast<std::size_t>(s.id)];
    if (slot.phone_ids.empty()) {
      slot = std::move(s);
    } else if (slot.phone_ids != s.phone_ids || slot.style_id != s.style_id || slot.split != s.split ||
               slot.token_flags != s.token_flags) {
      fail("sentence " + std::to_string(s.id) + " disagrees with an earlier rendition");
    }
    if (!c.renditions.empty()) {
      const auto& prev = c.renditions.back();
      if (std::make_pair(prev.sentence_id, prev.actor_id) >= std::make_pair(r.sentence_id, r.actor_id)) {
        fail("records not sorted by (sentence_id, actor_id) or duplicated");
      }
    }
    c.renditions.push_back(std::move(r));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed field: ") + e.what());
  } catch (const InvalidInput& e) {
    fail(e.what());
  }
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path& dir) {
  nlohmann::json prof_json;
  try {
    prof_json = nlohmann::json::parse(util::read_file(dir / "profile.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("profile.json: ") + e.what());
  }
  detail::check_version(prof_json, "profile.json", FormatError::npos);
  Corpus c;
  std::size_t expected = 0;
  try {
    c.profile = profile_from_json(prof_json.at("profile"));
    c.seed = prof_json.at("seed").get<std::uint64_t>();
    expected = prof_json.at("records").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("profile.json: ") + e.what());
  }
  if (c.profile.sentences < 0) throw FormatError("profile.json: negative sentence count");
  c.sentences.resize(static_cast<std::size_t>(c.profile.sentences));

  std::istringstream in(util::read_file(dir / "corpus.jsonl"));
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    detail::parse_record(line, index, c.profile, c);
    ++index;
  }
  if (index != expected) {
    throw FormatError("corpus truncated: record " + std::to_string(index) + " missing (expected " +
                          std::to_string(expected) + " records)",
                      index);
  }
  for (std::size_t i = 0; i < c.sentences.size(); ++i) {
    if (c.sentences[i].phone_ids.empty()) {
      throw FormatError("sentence " + std::to_string(i) + " has no renditions");
    }
    c.sentences[i].id = static_cast<int>(i);
  }
  c.split = split_from_sentences(c.sentences, c.profile.renditions_per_test);
  return c;
}

inline SpeakerStats load_stats(const std::filesystem::path& dir) {
  try {
    return stats_from_json(nlohmann::json::parse(util::read_file(dir / "stats.json")));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("stats.json: ") + e.what());
  }
}

}  // namespace sparsectl::corpus
