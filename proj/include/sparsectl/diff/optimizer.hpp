#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sparsectl/diff/graph.hpp"

namespace sparsectl::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // <= 0 disables global-norm clipping
};

// Adam with bias correction. Moment accumulators mirror the trainable
// parameters of one store; the store's grads are zeroed after every call.
template <class Real>
class Adam {
 public:
  Adam(ParamStore<Real>& store, AdamConfig config = {}) : store_(&store), config_(config) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& p = store[i];
      m_.push_back(Matrix<Real>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix<Real>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  // Returns false (and leaves parameters untouched) if any gradient is
  // non-finite; the incident is counted.
  bool step() {
    double sq = 0.0;
    for (std::size_t i = 0; i < store_->size(); ++i) {
      const auto& p = (*store_)[i];
      if (!p.trainable) continue;
      sq += static_cast<double>(p.grad.squaredNorm());
    }
    if (!std::isfinite(sq)) {
      ++skipped_;
      store_->zero_grad();
      return false;
    }
    const double norm = std::sqrt(sq);
    last_grad_norm_ = norm;
    const double clip =
        (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Real>(config_.beta1);
    const auto b2 = static_cast<Real>(config_.beta2);
    for (std::size_t i = 0; i < store_->size(); ++i) {
      auto& p = (*store_)[i];
      if (!p.trainable) continue;
      Matrix<Real> g = p.grad * static_cast<Real>(clip);
      m_[i] = b1 * m_[i] + (Real(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Real(1) - b2) * g.cwiseProduct(g);
      const auto step_size = static_cast<Real>(config_.lr / bc1);
      const auto denom_scale = static_cast<Real>(1.0 / std::sqrt(bc2));
      p.value.array() -= step_size * m_[i].array() /
                         ((v_[i].array().sqrt() * denom_scale) + static_cast<Real>(config_.eps));
    }
    store_->zero_grad();
    return true;
  }

  std::size_t steps() const { return t_; }
  std::size_t skipped() const { return skipped_; }
  double last_grad_norm() const { return last_grad_norm_; }
  const AdamConfig& config() const { return config_; }

 private:
  ParamStore<Real>* store_;
  AdamConfig config_;
  std::vector<Matrix<Real>> m_, v_;
  std::size_t t_ = 0;
  std::size_t skipped_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace sparsectl::diff
