#pragma once

#include <random>

#include "sparsectl/diff/graph.hpp"

namespace sparsectl::testing {

inline diff::Matrix<double> random_matrix(diff::Index rows, diff::Index cols, std::mt19937_64& rng,
                                          double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  diff::Matrix<double> m(rows, cols);
  for (diff::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline void randomize(diff::ParamStore<double>& store, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> dist(0.0, scale);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (!p.trainable) continue;
    for (diff::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = dist(rng);
  }
}

}  // namespace sparsectl::testing
