#pragma once

// Central finite-difference verification of analytic gradients (64-bit only).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "sparsectl/diff/graph.hpp"

namespace sparsectl::diff {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::size_t coordinates = 0;
};

namespace detail {

inline void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw InvalidInput("grad_check: eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
  }
}

inline void check_finite(double v, std::size_t coord, const char* what) {
  if (!std::isfinite(v)) {
    throw InvalidInput(std::string("grad_check: non-finite ") + what + " at coordinate " +
                       std::to_string(coord));
  }
}

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace detail

// f(graph, x) must return a scalar Var. Checks d f / d x at `point`.
template <class Fn>
GradCheckResult grad_check(Fn&& f, const Matrix<double>& point, double eps = 1e-6,
                           Mode mode = Mode::train) {
  detail::check_eps(eps);
  Matrix<double> analytic;
  {
    Graph<double> g(mode);
    auto x = g.variable(point);
    auto y = f(g, x);
    detail::check_finite(y.scalar(), 0, "output");
    g.backward(y);
    analytic = x.grad();
  }
  auto eval = [&](const Matrix<double>& at) {
    Graph<double> g(mode, false);
    return f(g, g.constant(at)).scalar();
  };
  GradCheckResult res;
  res.coordinates = static_cast<std::size_t>(point.size());
  Matrix<double> probe = point;
  for (Index i = 0; i < point.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double up = eval(probe);
    probe.data()[i] = orig - eps;
    const double down = eval(probe);
    probe.data()[i] = orig;
    const auto coord = static_cast<std::size_t>(i);
    detail::check_finite(up, coord, "output");
    detail::check_finite(down, coord, "output");
    detail::check_finite(analytic.data()[i], coord, "gradient");
    const double err = detail::rel_error(analytic.data()[i], (up - down) / (2.0 * eps));
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_coordinate = coord;
    }
  }
  return res;
}

// f(graph) must return a scalar Var. Checks d f / d p for every trainable
// parameter in `store`; `max_per_param` > 0 probes an evenly strided subset.
// Coordinates are numbered consecutively across parameters in store order.
template <class Fn>
GradCheckResult grad_check_params(Fn&& f, ParamStore<double>& store, double eps = 1e-6,
                                  std::size_t max_per_param = 0, Mode mode = Mode::train) {
  detail::check_eps(eps);
  store.zero_grad();
  {
    Graph<double> g(mode);
    auto y = f(g);
    detail::check_finite(y.scalar(), 0, "output");
    g.backward(y);
  }
  auto eval = [&]() {
    Graph<double> g(mode, false);
    return f(g).scalar();
  };
  GradCheckResult res;
  std::size_t base = 0;
  for (std::size_t k = 0; k < store.size(); ++k) {
    auto& p = store[k];
    const auto n = static_cast<std::size_t>(p.value.size());
    if (!p.trainable) continue;
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p.value.data()[i];
      p.value.data()[i] = orig + eps;
      const double up = eval();
      p.value.data()[i] = orig - eps;
      const double down = eval();
      p.value.data()[i] = orig;
      const std::size_t coord = base + i;
      detail::check_finite(up, coord, "output");
      detail::check_finite(down, coord, "output");
      detail::check_finite(p.grad.data()[i], coord, "gradient");
      const double err = detail::rel_error(p.grad.data()[i], (up - down) / (2.0 * eps));
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_coordinate = coord;
      }
      ++res.coordinates;
    }
    base += n;
  }
  store.zero_grad();
  return res;
}

}  // namespace sparsectl::diff
