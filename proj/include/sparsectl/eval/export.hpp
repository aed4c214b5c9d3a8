#pragma once

// Listening-test stimuli and plot-ready tables.

#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sparsectl/eval/refinement.hpp"
#include "sparsectl/eval/sweep.hpp"
#include "sparsectl/util/files.hpp"

namespace sparsectl::eval {

// T rows of "f0 energy duration", tab-separated, normalized units.
inline std::string paf_tsv(const PafMatrix& paf) {
  std::ostringstream os;
  os << std::setprecision(17) << "f0\tenergy\tduration\n";
  for (diff::Index t = 0; t < paf.rows(); ++t) os << paf(t, 0) << '\t' << paf(t, 1) << '\t' << paf(t, 2) << '\n';
  return os.str();
}

struct StimulusRow {
  std::string pair_id;
  std::string path_a, path_b, path_ref;  // relative to the output directory
  int sentence_id = 0;
  int driving_actor = 0;
  int target_speaker = 0;
};

inline nlohmann::ordered_json to_json(const StimulusRow& r) {
  return {{"pair_id", r.pair_id},         {"path_a", r.path_a},
          {"path_b", r.path_b},           {"path_ref", r.path_ref},
          {"sentence_id", r.sentence_id}, {"driving_actor", r.driving_actor},
          {"target_speaker", r.target_speaker}};
}

struct StimulusOptions {
  std::size_t k_a = 4;
  std::size_t k_b = 0;
  std::uint64_t seed = 1;
};

// Condition A and B predictions for every pair plus the driving rendition as
// reference. Slots are drawn at random per pair. Writes manifest.jsonl.
inline std::vector<StimulusRow> export_stimuli(const Controller& ctl, const EvalData& data,
                                               const std::vector<TransplantPair>& pairs,
                                               const std::filesystem::path& out_dir, StimulusOptions opt = {}) {
  std::filesystem::create_directories(out_dir);
  std::vector<ControlRequest> reqs_a, reqs_b;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    require_mismatched(pairs[i]);
    const auto& truth = data.driving_rendition(pairs[i]);
    const auto T = static_cast<int>(truth.rows());
    Rng rng(opt.seed * 7919ULL + i);
    const auto slots_a = random_slots(T, opt.k_a, rng);
    const auto slots_b = random_slots(T, opt.k_b, rng);
    reqs_a.push_back({&data.sentence(pairs[i]), pairs[i].target_speaker, driving_from(truth, slots_a)});
    reqs_b.push_back({&data.sentence(pairs[i]), pairs[i].target_speaker, driving_from(truth, slots_b)});
  }
  const auto pa = ctl.predict(reqs_a);
  const auto pb = ctl.predict(reqs_b);
  std::vector<StimulusRow> rows;
  std::string manifest;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::ostringstream id;
    id << "pair" << std::setw(4) << std::setfill('0') << i;
    StimulusRow r{id.str(),
                  id.str() + "_k" + std::to_string(opt.k_a) + ".tsv",
                  id.str() + "_k" + std::to_string(opt.k_b) + ".tsv",
                  id.str() + "_ref.tsv",
                  pairs[i].sentence_id,
                  pairs[i].driving_actor,
                  pairs[i].target_speaker};
    util::atomic_write(out_dir / r.path_a, paf_tsv(pa[i]));
    util::atomic_write(out_dir / r.path_b, paf_tsv(pb[i]));
    util::atomic_write(out_dir / r.path_ref, paf_tsv(data.driving_rendition(pairs[i])));
    manifest += to_json(r).dump() + "\n";
    rows.push_back(std::move(r));
  }
  util::atomic_write(out_dir / "manifest.jsonl", manifest);
  return rows;
}

struct PlotRow {
  std::string model;
  double x = 0.0;  // K for sweeps, step for refinement
  std::string metric;
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

// One row per (model, K).
inline std::vector<PlotRow> plot_rows(const SweepReport& rep) {
  std::vector<PlotRow> out;
  for (const auto& c : rep.curves) {
    for (const auto& p : c.points) out.push_back({c.model, static_cast<double>(p.k), "rmse", p.mean, p.ci.low, p.ci.high});
  }
  return out;
}

// Mean refinement curves per model: pooled RMSE plus one metric per stream,
// intervals bootstrapped over pairs.
inline std::vector<PlotRow> plot_rows(const std::vector<RefinementTrace>& traces, std::size_t resamples = 1000,
                                      std::uint64_t seed = 1) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RefinementTrace*>> by_model;
  for (const auto& t : traces) {
    if (!by_model.count(t.model)) order.push_back(t.model);
    by_model[t.model].push_back(&t);
  }
  std::vector<PlotRow> out;
  for (const auto& name : order) {
    const auto& group = by_model[name];
    const auto steps = group.front()->steps.size();
    for (const auto* t : group) {
      if (t->steps.size() != steps) throw ShapeError("traces of model '" + name + "' differ in length");
    }
    for (std::size_t k = 0; k < steps; ++k) {
      for (int m = -1; m < kNumStreams; ++m) {
        std::vector<double> v;
        for (const auto* t : group) {
          v.push_back(m < 0 ? t->steps[k].rmse : t->steps[k].rmse_per_stream[static_cast<std::size_t>(m)]);
        }
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        const auto ci = bootstrap_ci(v, resamples, 0.95, seed + k);
        const std::string metric = m < 0 ? "rmse" : "rmse_" + std::string(stream_name(stream_from_index(m)));
        out.push_back({name, static_cast<double>(k), metric, mean, ci.low, ci.high});
      }
    }
  }
  return out;
}

inline void write_plot_data(std::ostream& os, const std::vector<PlotRow>& rows) {
  os << "model\tx\tmetric\tvalue\tci_low\tci_high\n" << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.model << '\t' << r.x << '\t' << r.metric << '\t' << r.value << '\t' << r.ci_low << '\t' << r.ci_high
       << '\n';
  }
}

// Per-sentence contour: truth, prediction and driven marker for all 3T slots.
struct ContourRecord {
  std::string model;
  TransplantPair pair;
  PafMatrix truth;
  PafMatrix prediction;
  std::vector<Slot> driven;
};

inline void write_contour_header(std::ostream& os) {
  os << "model\tsentence_id\tdriving_actor\ttarget_speaker\tposition\tstream\ttruth\tprediction\tdriven\n";
}

inline void write_contour(std::ostream& os, const ContourRecord& c) {
  if (c.truth.rows() != c.prediction.rows() || c.truth.cols() != c.prediction.cols()) {
    throw ShapeError("contour truth and prediction differ in shape");
  }
  os << std::setprecision(10);
  for (int s = 0; s < kNumStreams; ++s) {
    for (diff::Index t = 0; t < c.truth.rows(); ++t) {
      const Slot here{static_cast<int>(t), stream_from_index(s)};
      const bool driven = std::find(c.driven.begin(), c.driven.end(), here) != c.driven.end();
      os << c.model << '\t' << c.pair.sentence_id << '\t' << c.pair.driving_actor << '\t' << c.pair.target_speaker
         << '\t' << t << '\t' << stream_name(here.stream) << '\t' << c.truth(t, s) << '\t' << c.prediction(t, s)
         << '\t' << (driven ? 1 : 0) << '\n';
    }
  }
}

}  // namespace sparsectl::eval
