#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sparsectl/eval/control.hpp"

namespace sparsectl::eval {

struct TraceStep {
  int step = 0;
  int driven_count = 0;
  std::optional<Slot> chosen;  // empty at step 0
  double rmse = 0.0;
  std::array<double, kNumStreams> rmse_per_stream{};
};

struct RefinementTrace {
  std::string model;
  TransplantPair pair;
  std::vector<TraceStep> steps;
};

// Undriven slot with the largest absolute error. Ties go to the earlier
// stream, then the earlier position.
inline std::optional<Slot> next_greedy_slot(const PafMatrix& pred, const PafMatrix& truth,
                                            const std::vector<Slot>& driven) {
  const auto T = static_cast<int>(truth.rows());
  std::vector<char> taken(static_cast<std::size_t>(T) * kNumStreams, 0);
  for (const auto& s : driven) taken[static_cast<std::size_t>(stream_index(s.stream) * T + s.position)] = 1;
  std::optional<Slot> best;
  double best_err = -1.0;
  for (int st = 0; st < kNumStreams; ++st) {
    for (int t = 0; t < T; ++t) {
      if (taken[static_cast<std::size_t>(st * T + t)]) continue;
      const double e = std::abs(pred(t, st) - truth(t, st));
      if (e > best_err) {
        best_err = e;
        best = Slot{t, stream_from_index(st)};
      }
    }
  }
  return best;
}

// Greedy refinement for many pairs at once (one batched prediction per step).
// Each trace has max_steps + 1 entries.
inline std::vector<RefinementTrace> iterative_refinement(const Controller& ctl, const EvalData& data,
                                                         const std::vector<TransplantPair>& pairs, int max_steps) {
  if (max_steps < 0) throw InvalidInput("max_steps must be >= 0");
  std::vector<RefinementTrace> traces(pairs.size());
  std::vector<std::vector<Slot>> driven(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    require_mismatched(pairs[i]);
    const auto T = data.driving_rendition(pairs[i]).rows();
    if (max_steps > 3 * T) {
      throw InvalidInput("max_steps=" + std::to_string(max_steps) + " exceeds 3T=" + std::to_string(3 * T) +
                         " for sentence " + std::to_string(pairs[i].sentence_id));
    }
    traces[i].model = ctl.name();
    traces[i].pair = pairs[i];
  }
  for (int step = 0; step <= max_steps; ++step) {
    std::vector<ControlRequest> reqs;
    reqs.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      reqs.push_back({&data.sentence(pairs[i]), pairs[i].target_speaker,
                      driving_from(data.driving_rendition(pairs[i]), driven[i])});
    }
    const auto preds = ctl.predict(reqs);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& truth = data.driving_rendition(pairs[i]);
      TraceStep ts;
      ts.step = step;
      ts.driven_count = static_cast<int>(driven[i].size());
      if (step > 0) ts.chosen = driven[i].back();
      ts.rmse = rmse(preds[i], truth);
      ts.rmse_per_stream = rmse_per_stream(preds[i], truth);
      traces[i].steps.push_back(ts);
      if (step < max_steps) driven[i].push_back(*next_greedy_slot(preds[i], truth, driven[i]));
    }
  }
  return traces;
}

inline RefinementTrace iterative_refinement(const Controller& ctl, const EvalData& data, const TransplantPair& pair,
                                            int max_steps) {
  return std::move(iterative_refinement(ctl, data, std::vector<TransplantPair>{pair}, max_steps).front());
}

// Mean trace RMSE per step across pairs.
inline std::vector<double> mean_curve(const std::vector<RefinementTrace>& traces) {
  if (traces.empty()) return {};
  std::vector<double> out(traces.front().steps.size(), 0.0);
  for (const auto& tr : traces) {
    if (tr.steps.size() != out.size()) throw ShapeError("traces of unequal length");
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += tr.steps[k].rmse;
  }
  for (auto& v : out) v /= static_cast<double>(traces.size());
  return out;
}

}  // namespace sparsectl::eval
