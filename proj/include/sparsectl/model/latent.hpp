#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "sparsectl/diff/ops.hpp"

namespace sparsectl::model {

struct LatentGaussian {
  std::vector<double> mu;
  std::vector<double> sigma;
};

// z = mu + sigma * eps, eps ~ N(0, I) drawn from `noise_seed`.
inline std::vector<double> reparameterize(const LatentGaussian& lg, std::uint64_t noise_seed) {
  if (lg.mu.size() != lg.sigma.size()) throw ShapeError("mu and sigma differ in length");
  Rng rng(noise_seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> z(lg.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!(lg.sigma[i] >= 0.0)) throw InvalidInput("sigma must be non-negative");
    z[i] = lg.mu[i] + lg.sigma[i] * n01(rng);
  }
  return z;
}

// KL(N(mu, diag sigma^2) || N(0, I)) in nats.
inline double kl_divergence(const LatentGaussian& lg) {
  if (lg.mu.size() != lg.sigma.size()) throw ShapeError("mu and sigma differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < lg.mu.size(); ++i) {
    const double s2 = lg.sigma[i] * lg.sigma[i];
    if (!(s2 > 0.0)) throw InvalidInput("sigma must be > 0");
    kl += s2 + lg.mu[i] * lg.mu[i] - 1.0 - std::log(s2);
  }
  return 0.5 * kl;
}

// Graph form: mean over rows of 1/2 sum_d (exp(lv) + mu^2 - 1 - lv).
template <class Real>
diff::Var<Real> kl_term(diff::Var<Real> mu, diff::Var<Real> logvar) {
  auto per = diff::sub(diff::add(diff::exp(logvar), diff::square(mu)), diff::add_scalar(logvar, Real(1)));
  return diff::scale(diff::sum(per), static_cast<Real>(0.5 / static_cast<double>(mu.rows())));
}

template <class Real>
diff::Var<Real> sample_latent(diff::Graph<Real>& g, diff::Var<Real> mu, diff::Var<Real> logvar, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  diff::Matrix<Real> eps(mu.rows(), mu.cols());
  for (diff::Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<Real>(n01(rng));
  auto sigma = diff::exp(diff::scale(logvar, Real(0.5)));
  return diff::add(mu, diff::mul(sigma, g.constant(std::move(eps))));
}

}  // namespace sparsectl::model
