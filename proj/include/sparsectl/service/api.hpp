#pragma once

// JSON request handling for the prediction service, independent of any HTTP
// library. The model and corpus are fixed at construction; handle() is const
// and safe to call from many threads.

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sparsectl/corpus/normalize.hpp"
#include "sparsectl/model/prosody_model.hpp"

namespace sparsectl::service {

using json = nlohmann::ordered_json;

struct ApiResponse {
  int status = 200;
  json body;
};

// Carries an HTTP status and, for 400s, the offending field.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string field, const std::string& message)
      : std::runtime_error(message), status_(status), field_(std::move(field)) {}
  int status() const { return status_; }
  const std::string& field() const { return field_; }

 private:
  int status_;
  std::string field_;
};

inline ApiResponse error_response(int status, const std::string& field, const std::string& message) {
  json e{{"status", status}, {"message", message}};
  if (!field.empty()) e["field"] = field;
  return {status, json{{"error", std::move(e)}}};
}

inline json paf_rows(const PafMatrix& m) {
  json rows = json::array();
  for (diff::Index t = 0; t < m.rows(); ++t) rows.push_back({m(t, 0), m(t, 1), m(t, 2)});
  return rows;
}

struct PredictRequest {
  int sentence_id = 0;
  int target_speaker = 0;
  int style_id = 0;
  model::DrivingSet driving;
};

namespace detail {

inline int int_field(const nlohmann::json& j, const std::string& name) {
  if (!j.contains(name)) throw ApiError(400, name, "missing field '" + name + "'");
  const auto& v = j.at(name);
  if (!v.is_number_integer()) throw ApiError(400, name, "field '" + name + "' must be an integer");
  return v.get<int>();
}

}  // namespace detail

// Syntax only (400s); range checks happen against the corpus.
inline PredictRequest parse_predict_request(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ApiError(400, "body", std::string("request body is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ApiError(400, "body", "request body must be a JSON object");
  PredictRequest r;
  r.sentence_id = detail::int_field(j, "sentence_id");
  r.target_speaker = detail::int_field(j, "target_speaker");
  r.style_id = detail::int_field(j, "style_id");
  if (!j.contains("driving")) throw ApiError(400, "driving", "missing field 'driving'");
  const auto& d = j.at("driving");
  if (!d.is_array()) throw ApiError(400, "driving", "field 'driving' must be an array");
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::string at = "driving[" + std::to_string(i) + "]";
    const auto& e = d[i];
    if (!e.is_object()) throw ApiError(400, at, at + " must be an object");
    const int pos = detail::int_field(e, "position");
    if (!e.contains("stream") || !e.at("stream").is_string()) {
      throw ApiError(400, at + ".stream", at + ".stream must be one of f0|energy|duration");
    }
    Stream stream;
    try {
      stream = parse_stream(e.at("stream").get<std::string>());
    } catch (const InvalidInput& ex) {
      throw ApiError(400, at + ".stream", ex.what());
    }
    if (!e.contains("value") || !e.at("value").is_number()) {
      throw ApiError(400, at + ".value", at + ".value must be a number");
    }
    r.driving.add(pos, stream, e.at("value").get<double>());
  }
  return r;
}

class PredictionService {
 public:
  // `raw` is the corpus as stored; `stats` its normalisation statistics.
  PredictionService(model::ProsodyModel<float> m, const corpus::Corpus& raw, corpus::SpeakerStats stats)
      : model_(std::move(m)),
        stats_(std::move(stats)),
        corpus_(corpus::normalized(raw, stats_)),
        started_(std::chrono::steady_clock::now()) {
    const auto& cfg = model_.config();
    if (cfg.num_speakers < corpus_.profile.speakers || cfg.num_styles < corpus_.profile.styles ||
        cfg.vocab_size < corpus_.profile.vocab_size) {
      throw InvalidInput("checkpoint vocabulary is smaller than the corpus profile");
    }
  }

  const model::ProsodyModel<float>& model() const { return model_; }

  ApiResponse handle(std::string_view method, std::string_view path, std::string_view body) const {
    try {
      const std::string p(path);
      if (p.rfind("/api/", 0) != 0) throw ApiError(404, "", "no such endpoint: " + p);
      const auto route = p.substr(5);
      const bool get = method == "GET", post = method == "POST";
      if (route == "health") return get ? health() : not_allowed(method, p);
      if (route == "sentences") return get ? sentences() : not_allowed(method, p);
      if (route.rfind("sentences/", 0) == 0) return get ? sentence(route.substr(10)) : not_allowed(method, p);
      if (route == "speakers") return get ? speakers() : not_allowed(method, p);
      if (route == "styles") return get ? styles() : not_allowed(method, p);
      if (route == "predict") return post ? predict(body) : not_allowed(method, p);
      throw ApiError(404, "", "no such endpoint: " + p);
    } catch (const ApiError& e) {
      return error_response(e.status(), e.field(), e.what());
    } catch (const std::exception& e) {
      return error_response(500, "", e.what());
    }
  }

  ApiResponse health() const {
    const double up = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    return {200, json{{"status", "ok"},
                      {"model_fingerprint", model_.fingerprint()},
                      {"family", model::family_name(model_.family())},
                      {"uptime_seconds", up}}};
  }

  ApiResponse sentences() const {
    json list = json::array();
    for (const auto& s : corpus_.sentences) {
      list.push_back({{"id", s.id},
                      {"T", s.length()},
                      {"style_id", s.style_id},
                      {"split", corpus::split_name(s.split)},
                      {"phone_ids", s.phone_ids}});
    }
    return {200, json{{"sentences", std::move(list)}}};
  }

  ApiResponse sentence(const std::string& id_text) const {
    const int id = parse_id(id_text, "sentence id");
    if (id < 0 || id >= static_cast<int>(corpus_.sentences.size())) {
      throw ApiError(404, "", "unknown sentence id " + std::to_string(id));
    }
    const auto& s = corpus_.sentence(id);
    json rends = json::array();
    for (const auto* r : corpus_.renditions_of(id)) {
      rends.push_back({{"actor_id", r->actor_id},
                       {"paf",
                        {{"normalized", paf_rows(r->paf.values)},
                         {"denormalized", paf_rows(corpus::denormalize(r->paf, r->actor_id, stats_).values)}}}});
    }
    return {200, json{{"id", s.id},
                      {"T", s.length()},
                      {"style_id", s.style_id},
                      {"split", corpus::split_name(s.split)},
                      {"phone_ids", s.phone_ids},
                      {"token_flags", s.token_flags},
                      {"renditions", std::move(rends)}}};
  }

  // Speakers with the statistics a client needs to convert display units.
  ApiResponse speakers() const {
    json list = json::array();
    for (const auto& [id, st] : stats_.speakers) {
      json streams = json::object();
      for (int s = 0; s < kNumStreams; ++s) {
        const auto& m = st[static_cast<std::size_t>(s)];
        streams[std::string(stream_name(stream_from_index(s)))] = {{"mean", m.mean}, {"std", m.std}};
      }
      list.push_back({{"id", id}, {"stats", std::move(streams)}});
    }
    return {200, json{{"speakers", std::move(list)}}};
  }

  ApiResponse styles() const {
    json list = json::array();
    for (int s = 0; s < corpus_.profile.styles; ++s) {
      int n = 0;
      for (const auto& sent : corpus_.sentences) n += sent.style_id == s ? 1 : 0;
      list.push_back({{"id", s}, {"sentences", n}});
    }
    return {200, json{{"styles", std::move(list)}}};
  }

  ApiResponse predict(std::string_view body) const {
    const auto req = parse_predict_request(body);
    if (req.sentence_id < 0 || req.sentence_id >= static_cast<int>(corpus_.sentences.size())) {
      throw ApiError(404, "sentence_id", "unknown sentence id " + std::to_string(req.sentence_id));
    }
    if (!stats_.speakers.count(req.target_speaker) || req.target_speaker >= model_.config().num_speakers) {
      throw ApiError(404, "target_speaker", "unknown speaker " + std::to_string(req.target_speaker));
    }
    if (req.style_id < 0 || req.style_id >= corpus_.profile.styles) {
      throw ApiError(404, "style_id", "unknown style " + std::to_string(req.style_id));
    }
    const auto& s = corpus_.sentence(req.sentence_id);
    try {
      req.driving.validate(s.length());
    } catch (const InvalidInput& e) {
      throw ApiError(422, "driving", e.what());
    }
    if (!model_.accepts_driving() && !req.driving.empty()) {
      throw ApiError(422, "driving", "model family nocontrol takes no driving values (K=" +
                                         std::to_string(req.driving.size()) + ")");
    }
    const auto pred = model_.predict(model::ModelInput{s.phone_ids, req.target_speaker, req.style_id, req.driving});
    double mu2 = 0.0;
    for (double m : pred.mu) mu2 += m * m;
    const PafSequence norm{pred.paf, Normalization::per_speaker};
    json latent_norm = pred.mu.empty() ? json(nullptr) : json(std::sqrt(mu2));
    return {200, json{{"sentence_id", req.sentence_id},
                      {"target_speaker", req.target_speaker},
                      {"style_id", req.style_id},
                      {"T", s.length()},
                      {"K", req.driving.size()},
                      {"paf",
                       {{"normalized", paf_rows(pred.paf)},
                        {"denormalized", paf_rows(corpus::denormalize(norm, req.target_speaker, stats_).values)}}},
                      {"attention_weights", pred.attention},
                      {"latent_mu_norm", std::move(latent_norm)},
                      {"model_fingerprint", model_.fingerprint()}}};
  }

 private:
  static int parse_id(const std::string& text, const std::string& what) {
    std::size_t used = 0;
    int id = 0;
    try {
      id = std::stoi(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (text.empty() || used != text.size()) throw ApiError(404, "", "unknown " + what + " '" + text + "'");
    return id;
  }

  static ApiResponse not_allowed(std::string_view method, const std::string& path) {
    return error_response(405, "", std::string(method) + " not allowed on " + path);
  }

  model::ProsodyModel<float> model_;
  corpus::SpeakerStats stats_;
  corpus::Corpus corpus_;
  std::chrono::steady_clock::time_point started_;
};

}  // namespace sparsectl::service
