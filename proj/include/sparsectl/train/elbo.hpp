#pragma once

#include "sparsectl/model/latent.hpp"
#include "sparsectl/paf.hpp"

namespace sparsectl::train {

struct ElboTerms {
  double reconstruction = 0.0;  // mean squared error over the 3T values
  double kl = 0.0;              // nats
  double beta = 0.0;
  double total = 0.0;
};

inline ElboTerms elbo_loss(const PafMatrix& pred, const PafMatrix& truth, const model::LatentGaussian& lg,
                           double beta) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw ShapeError("elbo: prediction " + diff::shape_str(pred.rows(), pred.cols()) + " vs truth " +
                     diff::shape_str(truth.rows(), truth.cols()));
  }
  ElboTerms t;
  t.reconstruction = (pred - truth).squaredNorm() / static_cast<double>(pred.size());
  t.kl = lg.mu.empty() ? 0.0 : model::kl_divergence(lg);
  t.beta = beta;
  t.total = t.reconstruction + beta * t.kl;
  return t;
}

// Linear warm-up from 0 to `beta` over the first `warmup_steps` steps.
inline double beta_at(std::size_t step, std::size_t warmup_steps, double beta) {
  if (warmup_steps == 0) return beta;
  return beta * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

}  // namespace sparsectl::train
