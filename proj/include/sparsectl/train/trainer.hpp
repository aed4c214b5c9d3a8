#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "sparsectl/corpus/types.hpp"
#include "sparsectl/diff/optimizer.hpp"
#include "sparsectl/model/prosody_model.hpp"
#include "sparsectl/train/elbo.hpp"

namespace sparsectl::train {

// full: every slot. random-subset: each slot kept with probability
// subset_keep. random-k: K uniform in [1, 3T], then K uniform slots.
enum class DrivingPolicy { full, random_subset, random_k };

inline std::string_view policy_name(DrivingPolicy p) {
  switch (p) {
    case DrivingPolicy::full: return "full";
    case DrivingPolicy::random_subset: return "random-subset";
    case DrivingPolicy::random_k: return "random-k";
  }
  return "?";
}

inline DrivingPolicy parse_policy(std::string_view s) {
  if (s == "full") return DrivingPolicy::full;
  if (s == "random-subset" || s == "subset") return DrivingPolicy::random_subset;
  if (s == "random-k") return DrivingPolicy::random_k;
  throw InvalidInput("unknown driving policy '" + std::string(s) + "' (expected full|random-subset|random-k)");
}

struct TrainSchedule {
  int epochs = 30;
  int batch_size = 16;
  double lr = 2e-3;
  double beta = 0.001;
  double warmup_fraction = 0.2;
  double clip_norm = 5.0;
  // micvae: how each example's driving bag is built from its own rendition.
  DrivingPolicy policy = DrivingPolicy::random_k;
  double subset_keep = 0.5;      // random-subset: per-slot keep probability
  double empty_bag_rate = 0.05;  // probability of an empty bag per example
  // masked: percentage of slots hidden from the encoder (P).
  double mask_percent = 50.0;
  std::uint64_t seed = 1;

  void validate() const {
    auto prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput(std::string(what) + " must lie in [0, 1]");
    };
    if (epochs < 0) throw InvalidInput("epochs must be >= 0");
    if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
    if (!(lr > 0.0)) throw InvalidInput("lr must be > 0");
    if (!(beta >= 0.0)) throw InvalidInput("beta must be >= 0");
    prob(warmup_fraction, "warmup_fraction");
    prob(subset_keep, "subset_keep");
    prob(empty_bag_rate, "empty_bag_rate");
    if (!(mask_percent >= 0.0 && mask_percent <= 100.0)) throw InvalidInput("mask_percent must lie in [0, 100]");
  }
};

inline nlohmann::ordered_json to_json(const TrainSchedule& s) {
  return {{"epochs", s.epochs},           {"batch_size", s.batch_size},
          {"lr", s.lr},                   {"beta", s.beta},
          {"warmup_fraction", s.warmup_fraction}, {"clip_norm", s.clip_norm},
          {"policy", policy_name(s.policy)}, {"subset_keep", s.subset_keep},
          {"empty_bag_rate", s.empty_bag_rate}, {"mask_percent", s.mask_percent},
          {"seed", s.seed}};
}

struct TrainResult {
  std::vector<double> loss;  // total per step
  std::vector<double> reconstruction;
  std::vector<double> kl;
  std::size_t steps = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t skipped_steps = 0;
  bool diverged = false;
  std::string message;
  // Driven / total slot counts seen by the encoder over training.
  std::size_t driven_slots = 0;
  std::size_t total_slots = 0;
  double seconds = 0.0;

  // Mean of the first / last window of `window` steps (default: one epoch).
  double initial_smoothed(std::size_t window = 0) const { return window_mean(0, window); }
  double final_smoothed(std::size_t window = 0) const {
    const auto w = effective(window);
    return loss.size() < w ? window_mean(0, w) : window_mean(loss.size() - w, w);
  }

 private:
  std::size_t effective(std::size_t window) const {
    const auto w = window > 0 ? window : std::max<std::size_t>(1, steps_per_epoch);
    return std::min(w, std::max<std::size_t>(1, loss.size()));
  }
  double window_mean(std::size_t begin, std::size_t window) const {
    if (loss.empty()) return std::nan("");
    const auto w = effective(window);
    const auto end = std::min(loss.size(), begin + w);
    return std::accumulate(loss.begin() + static_cast<long>(begin), loss.begin() + static_cast<long>(end), 0.0) /
           static_cast<double>(end - begin);
  }
};

struct TrainingExample {
  std::vector<int> phone_ids;
  int speaker = 0;
  int style = 0;
  PafMatrix paf;  // normalized
};

inline std::vector<TrainingExample> training_examples(const corpus::Corpus& c, corpus::Split split = corpus::Split::train) {
  std::vector<TrainingExample> out;
  for (const auto& r : c.renditions) {
    const auto& s = c.sentence(r.sentence_id);
    if (s.split != split) continue;
    if (r.paf.normalization != Normalization::per_speaker) {
      throw InvalidInput("training requires a normalized corpus");
    }
    out.push_back({s.phone_ids, r.actor_id, s.style_id, r.paf.values});
  }
  return out;
}

// Encoder input for one training example under the schedule's policy.
inline model::DrivingSet training_driving_set(model::Family family, const TrainSchedule& s, const PafMatrix& paf,
                                              Rng& rng) {
  switch (family) {
    case model::Family::nocontrol:
      return {};
    case model::Family::masked:
      return model::sample_training_mask(paf, s.mask_percent, rng);
    case model::Family::micvae: {
      if (s.empty_bag_rate > 0.0 && std::bernoulli_distribution(s.empty_bag_rate)(rng)) return {};
      switch (s.policy) {
        case DrivingPolicy::full: return model::full_driving_set(paf);
        case DrivingPolicy::random_subset: return model::sample_training_mask(paf, 100.0 * (1.0 - s.subset_keep), rng);
        case DrivingPolicy::random_k: {
          const auto n = static_cast<std::size_t>(paf.size());
          const auto k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
          return model::random_driving_set(paf, k, rng);
        }
      }
      return {};
    }
  }
  return {};
}

using StepCallback = std::function<void(std::size_t step, std::size_t epoch, const ElboTerms&)>;

// Minimises reconstruction + beta * KL with Adam. Driving and target speaker
// are the same rendition at training time. On a non-finite loss the model is
// restored to its state at the start of the epoch and training stops.
template <class Real>
TrainResult train(model::ProsodyModel<Real>& m, const std::vector<TrainingExample>& data,
                  const TrainSchedule& s, const StepCallback& on_step = {}) {
  s.validate();
  if (data.empty()) throw InvalidInput("no training examples");
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  auto& store = m.params();
  diff::Adam<Real> opt(store, {s.lr, 0.9, 0.999, 1e-8, s.clip_norm});
  Rng rng(s.seed);
  const auto n = data.size();
  const auto bs = static_cast<std::size_t>(s.batch_size);
  res.steps_per_epoch = (n + bs - 1) / bs;
  const auto total_steps = res.steps_per_epoch * static_cast<std::size_t>(s.epochs);
  const auto warmup = static_cast<std::size_t>(std::ceil(s.warmup_fraction * static_cast<double>(total_steps)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<diff::Matrix<Real>> snapshot(store.size());
  for (int epoch = 0; epoch < s.epochs && !res.diverged; ++epoch) {
    for (std::size_t i = 0; i < store.size(); ++i) snapshot[i] = store[i].value;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const auto b1 = std::min(n, b0 + bs);
      std::vector<model::ModelInput> batch;
      std::vector<const TrainingExample*> ex;
      diff::Index rows = 0;
      for (auto k = b0; k < b1; ++k) {
        const auto& e = data[order[k]];
        auto ds = training_driving_set(m.family(), s, e.paf, rng);
        if (m.family() != model::Family::nocontrol) {
          res.driven_slots += ds.size();
          res.total_slots += static_cast<std::size_t>(e.paf.size());
        }
        batch.push_back({e.phone_ids, e.speaker, e.style, std::move(ds)});
        ex.push_back(&e);
        rows += e.paf.rows();
      }
      // Per-example mean squared error, averaged over the batch.
      diff::Matrix<Real> truth(rows, kNumStreams), weight(rows, kNumStreams);
      diff::Index off = 0;
      const double B = static_cast<double>(ex.size());
      for (const auto* e : ex) {
        truth.middleRows(off, e->paf.rows()) = e->paf.template cast<Real>();
        weight.middleRows(off, e->paf.rows()).setConstant(static_cast<Real>(1.0 / (B * static_cast<double>(e->paf.size()))));
        off += e->paf.rows();
      }
      diff::Graph<Real> g(diff::Mode::train);
      auto f = m.forward(g, batch, model::LatentMode::sample, &rng);
      auto err = diff::sub(f.pred, g.constant(std::move(truth)));
      auto recon = diff::sum(diff::mul(diff::square(err), g.constant(std::move(weight))));
      ElboTerms terms;
      terms.beta = beta_at(res.steps, warmup, s.beta);
      terms.reconstruction = static_cast<double>(recon.scalar());
      auto loss = recon;
      if (f.has_latent) {
        auto kl = model::kl_term(f.mu, f.logvar);
        terms.kl = static_cast<double>(kl.scalar());
        loss = diff::add(recon, diff::scale(kl, static_cast<Real>(terms.beta)));
      }
      terms.total = terms.reconstruction + terms.beta * terms.kl;
      if (!std::isfinite(terms.total)) {
        for (std::size_t i = 0; i < store.size(); ++i) store[i].value = snapshot[i];
        res.diverged = true;
        res.message = "non-finite loss at step " + std::to_string(res.steps) + "; restored epoch " +
                      std::to_string(epoch) + " start";
        break;
      }
      g.backward(loss);
      if (!opt.step()) ++res.skipped_steps;
      res.loss.push_back(terms.total);
      res.reconstruction.push_back(terms.reconstruction);
      res.kl.push_back(terms.kl);
      if (on_step) on_step(res.steps, static_cast<std::size_t>(epoch), terms);
      ++res.steps;
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline nlohmann::ordered_json training_metadata(const TrainSchedule& s, const TrainResult& r,
                                                const std::string& corpus_ref) {
  return {{"schedule", to_json(s)},
          {"seed", s.seed},
          {"steps", r.steps},
          {"steps_per_epoch", r.steps_per_epoch},
          {"skipped_steps", r.skipped_steps},
          {"diverged", r.diverged},
          {"loss_history", r.loss},
          {"initial_smoothed_loss", r.loss.empty() ? 0.0 : r.initial_smoothed()},
          {"final_smoothed_loss", r.loss.empty() ? 0.0 : r.final_smoothed()},
          {"mask_percent", s.mask_percent},
          {"stats_ref", corpus_ref}};
}

}  // namespace sparsectl::train
