#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "sparsectl/eval/control.hpp"

namespace sparsectl::eval {

inline const std::vector<int>& default_k_grid() {
  static const std::vector<int> grid{0, 6, 12, 36, 72, 256};
  return grid;
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Percentile bootstrap interval of the mean.
inline Interval bootstrap_ci(const std::vector<double>& values, std::size_t resamples = 1000, double level = 0.95,
                             std::uint64_t seed = 0) {
  if (values.empty()) throw InvalidInput("bootstrap of an empty sample");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    m = s / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const double a = (1.0 - level) / 2.0;
  auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::clamp(q * static_cast<double>(resamples - 1), 0.0,
                                                         static_cast<double>(resamples - 1)));
    return means[idx];
  };
  return {at(a), at(1.0 - a)};
}

struct SweepPoint {
  int k = 0;             // requested
  double mean = 0.0;
  Interval ci;
  std::size_t samples = 0;
  std::size_t clamped = 0;  // trials where K was reduced to 3T
  std::vector<double> values;
};

struct SweepCurve {
  std::string model;
  std::vector<SweepPoint> points;
};

struct SweepReport {
  std::vector<int> k_grid;
  std::vector<SweepCurve> curves;

  const SweepCurve& curve(const std::string& model) const {
    for (const auto& c : curves) {
      if (c.model == model) return c;
    }
    throw InvalidInput("no curve for model '" + model + "'");
  }
};

struct SweepOptions {
  std::vector<int> k_grid = default_k_grid();
  std::size_t trials_per_k = 200;
  std::uint64_t seed = 1;
  std::size_t bootstrap_resamples = 1000;
};

// Every model sees the same (pair, slot set) for a given trial.
inline SweepReport robustness_sweep(const std::vector<const Controller*>& models, const EvalData& data,
                                    const std::vector<TransplantPair>& pairs, SweepOptions opt = {}) {
  if (pairs.empty()) throw InvalidInput("robustness sweep needs at least one transplant pair");
  if (models.empty()) throw InvalidInput("robustness sweep needs at least one model");
  if (opt.trials_per_k == 0) throw InvalidInput("trials_per_k must be >= 1");
  for (const auto& p : pairs) require_mismatched(p);
  auto grid = opt.k_grid;
  if (grid.empty()) throw InvalidInput("empty K grid");
  for (int k : grid) {
    if (k < 0) throw InvalidInput("K grid entries must be >= 0");
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  SweepReport rep;
  rep.k_grid = grid;
  for (const auto* m : models) rep.curves.push_back({m->name(), {}});

  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    const int k = grid[gi];
    Rng rng(opt.seed * 1000003ULL + static_cast<std::uint64_t>(k));
    std::vector<ControlRequest> reqs;
    std::vector<const PafMatrix*> truths;
    std::size_t clamped = 0;
    for (std::size_t t = 0; t < opt.trials_per_k; ++t) {
      const auto& pair = pairs[std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng)];
      const auto& truth = data.driving_rendition(pair);
      const auto cap = static_cast<std::size_t>(truth.rows()) * kNumStreams;
      auto kk = static_cast<std::size_t>(k);
      if (kk > cap) {
        kk = cap;
        ++clamped;
      }
      reqs.push_back({&data.sentence(pair), pair.target_speaker,
                      driving_from(truth, random_slots(static_cast<int>(truth.rows()), kk, rng))});
      truths.push_back(&truth);
    }
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      const auto preds = models[mi]->predict(reqs);
      SweepPoint pt;
      pt.k = k;
      pt.clamped = clamped;
      pt.samples = preds.size();
      for (std::size_t t = 0; t < preds.size(); ++t) pt.values.push_back(rmse(preds[t], *truths[t]));
      pt.mean = std::accumulate(pt.values.begin(), pt.values.end(), 0.0) / static_cast<double>(pt.values.size());
      pt.ci = bootstrap_ci(pt.values, opt.bootstrap_resamples, 0.95, opt.seed + gi);
      rep.curves[mi].points.push_back(std::move(pt));
    }
  }
  return rep;
}

}  // namespace sparsectl::eval
