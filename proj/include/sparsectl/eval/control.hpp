#pragma once

// Simulated control: driving values are read from one actor's rendition and
// the model is asked to produce that rendition while conditioned on another
// speaker.

#include <algorithm>
#include <cmath>
#include <array>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sparsectl/corpus/transplant.hpp"
#include "sparsectl/model/prosody_model.hpp"

namespace sparsectl::eval {

using corpus::TransplantPair;
using model::DrivingSet;

inline double rmse(const PafMatrix& pred, const PafMatrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw ShapeError("rmse: prediction " + diff::shape_str(pred.rows(), pred.cols()) + " vs truth " +
                     diff::shape_str(truth.rows(), truth.cols()));
  }
  if (pred.size() == 0) throw InvalidInput("rmse of empty sequences");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

inline std::array<double, kNumStreams> rmse_per_stream(const PafMatrix& pred, const PafMatrix& truth) {
  rmse(pred, truth);  // shape check
  std::array<double, kNumStreams> out{};
  for (int s = 0; s < kNumStreams; ++s) {
    out[static_cast<std::size_t>(s)] =
        std::sqrt((pred.col(s) - truth.col(s)).squaredNorm() / static_cast<double>(pred.rows()));
  }
  return out;
}

struct Slot {
  int position = 0;
  Stream stream = Stream::f0;

  friend bool operator==(const Slot&, const Slot&) = default;
};

inline DrivingSet driving_from(const PafMatrix& rendition, const std::vector<Slot>& slots) {
  DrivingSet ds;
  for (const auto& s : slots) {
    if (s.position < 0 || s.position >= rendition.rows()) throw InvalidInput("slot position outside sentence");
    ds.add(s.position, s.stream, rendition(s.position, stream_index(s.stream)));
  }
  return ds;
}

// K distinct slots drawn uniformly from the 3T available.
inline std::vector<Slot> random_slots(int T, std::size_t K, Rng& rng) {
  const auto n = static_cast<std::size_t>(T) * kNumStreams;
  if (K > n) throw InvalidInput("K=" + std::to_string(K) + " exceeds 3T=" + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<Slot> out;
  for (std::size_t i = 0; i < K; ++i) {
    out.push_back({static_cast<int>(idx[i] / kNumStreams), stream_from_index(static_cast<int>(idx[i] % kNumStreams))});
  }
  return out;
}

struct ControlRequest {
  const corpus::SentenceSpec* sentence = nullptr;
  int target_speaker = 0;
  DrivingSet driving;
};

// Something that turns sparse driving values into a full contour.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual std::vector<PafMatrix> predict(const std::vector<ControlRequest>& requests) const = 0;
};

// Any model family, posterior-mean decoding. NoControl only accepts K=0.
class ModelController : public Controller {
 public:
  ModelController(std::string name, const model::ProsodyModel<float>& m, std::size_t chunk = 64)
      : name_(std::move(name)), model_(&m), chunk_(chunk) {}

  std::string name() const override { return name_; }

  std::vector<PafMatrix> predict(const std::vector<ControlRequest>& requests) const override {
    std::vector<PafMatrix> out;
    out.reserve(requests.size());
    for (std::size_t b = 0; b < requests.size(); b += chunk_) {
      std::vector<model::ModelInput> batch;
      for (std::size_t i = b; i < std::min(requests.size(), b + chunk_); ++i) {
        const auto& r = requests[i];
        if (!model_->accepts_driving() && r.driving.size() > 0) {
          throw InvalidInput("nocontrol has no sparse input (K=" + std::to_string(r.driving.size()) +
                             "); use crude control");
        }
        batch.push_back({r.sentence->phone_ids, r.target_speaker, r.sentence->style_id, r.driving});
      }
      for (auto& p : model_->predict(batch)) out.push_back(std::move(p.paf));
    }
    return out;
  }

 private:
  std::string name_;
  const model::ProsodyModel<float>* model_;
  std::size_t chunk_;
};

// NoControl prediction with the driven slots overwritten.
class CrudeController : public Controller {
 public:
  CrudeController(std::string name, const model::ProsodyModel<float>& m, std::size_t chunk = 64)
      : name_(std::move(name)), model_(&m), chunk_(chunk) {
    if (m.family() != model::Family::nocontrol) throw InvalidInput("crude control wraps a nocontrol model");
  }

  std::string name() const override { return name_; }

  std::vector<PafMatrix> predict(const std::vector<ControlRequest>& requests) const override {
    std::vector<PafMatrix> out;
    out.reserve(requests.size());
    for (std::size_t b = 0; b < requests.size(); b += chunk_) {
      std::vector<model::ModelInput> batch;
      const auto e = std::min(requests.size(), b + chunk_);
      for (std::size_t i = b; i < e; ++i) {
        const auto& r = requests[i];
        batch.push_back({r.sentence->phone_ids, r.target_speaker, r.sentence->style_id, {}});
      }
      auto preds = model_->predict(batch);
      for (std::size_t i = b; i < e; ++i) {
        auto paf = std::move(preds[i - b].paf);
        const auto& ds = requests[i].driving;
        ds.validate(static_cast<int>(paf.rows()));
        for (const auto& v : ds.values()) paf(v.position, stream_index(v.stream)) = v.value;
        out.push_back(std::move(paf));
      }
    }
    return out;
  }

 private:
  std::string name_;
  const model::ProsodyModel<float>* model_;
  std::size_t chunk_;
};

// Normalised corpus view used by every evaluation routine.
struct EvalData {
  const corpus::Corpus* corpus = nullptr;  // normalised renditions

  explicit EvalData(const corpus::Corpus& c) : corpus(&c) {
    for (const auto& r : c.renditions) {
      if (r.paf.normalization != Normalization::per_speaker) {
        throw InvalidInput("evaluation needs a normalized corpus");
      }
    }
  }

  const PafMatrix& driving_rendition(const TransplantPair& p) const {
    return corpus->rendition(p.sentence_id, p.driving_actor).paf.values;
  }
  const corpus::SentenceSpec& sentence(const TransplantPair& p) const { return corpus->sentence(p.sentence_id); }
};

inline void require_mismatched(const TransplantPair& p) {
  if (p.driving_actor == p.target_speaker) {
    throw InvalidInput("evaluation requires driving_actor != target_speaker (sentence " +
                       std::to_string(p.sentence_id) + ", actor " + std::to_string(p.driving_actor) + ")");
  }
}

// One controlled prediction for a transplant pair.
inline PafMatrix simulate_control(const Controller& ctl, const EvalData& data, const TransplantPair& pair,
                                  const std::vector<Slot>& slots) {
  require_mismatched(pair);
  ControlRequest req{&data.sentence(pair), pair.target_speaker, driving_from(data.driving_rendition(pair), slots)};
  return std::move(ctl.predict({req}).front());
}

}  // namespace sparsectl::eval
