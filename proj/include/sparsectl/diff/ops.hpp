#pragma once

// Differentiable primitives. Each op computes its value eagerly and records a
// closure that pushes the output gradient back into its inputs.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sparsectl/diff/graph.hpp"

namespace sparsectl::diff {

namespace detail {

template <class Real>
void require_same_shape(const char* op, const Var<Real>& a, const Var<Real>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
  }
}

template <class Real>
void accumulate(Graph<Real>& g, const Var<Real>& v, const Matrix<Real>& delta) {
  if (g.needs_grad(v.id())) g.grad(v.id()) += delta;
}

}  // namespace detail

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()));
  }
  auto& g = a.graph();
  Matrix<Real> out = a.value() * b.value();
  return g.emit(std::move(out), "matmul", {a, b}, [a, b](Graph<Real>& g, std::size_t self) {
    const auto& d = g.grad(self);
    if (g.needs_grad(a.id())) g.grad(a.id()).noalias() += d * b.value().transpose();
    if (g.needs_grad(b.id())) g.grad(b.id()).noalias() += a.value().transpose() * d;
  });
}

// a * b^T
template <class Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: shape mismatch " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()) + "^T");
  }
  auto& g = a.graph();
  Matrix<Real> out = a.value() * b.value().transpose();
  return g.emit(std::move(out), "matmul_nt", {a, b}, [a, b](Graph<Real>& g, std::size_t self) {
    const auto& d = g.grad(self);
    if (g.needs_grad(a.id())) g.grad(a.id()).noalias() += d * b.value();
    if (g.needs_grad(b.id())) g.grad(b.id()).noalias() += d.transpose() * a.value();
  });
}

// a^T * b
template <class Real>
Var<Real> matmul_tn(Var<Real> a, Var<Real> b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: shape mismatch " + shape_str(a.rows(), a.cols()) + "^T x " +
                     shape_str(b.rows(), b.cols()));
  }
  auto& g = a.graph();
  Matrix<Real> out = a.value().transpose() * b.value();
  return g.emit(std::move(out), "matmul_tn", {a, b}, [a, b](Graph<Real>& g, std::size_t self) {
    const auto& d = g.grad(self);
    if (g.needs_grad(a.id())) g.grad(a.id()).noalias() += b.value() * d.transpose();
    if (g.needs_grad(b.id())) g.grad(b.id()).noalias() += a.value() * d;
  });
}

// x * W^T (+ bias row). W is out x in, bias 1 x out.
template <class Real>
Var<Real> affine(Var<Real> x, Var<Real> w) {
  return matmul_nt(x, w);
}

template <class Real>
Var<Real> affine(Var<Real> x, Var<Real> w, Var<Real> bias) {
  if (x.cols() != w.cols() || bias.rows() != 1 || bias.cols() != w.rows()) {
    throw ShapeError("affine: shape mismatch x" + shape_str(x.rows(), x.cols()) + " W" +
                     shape_str(w.rows(), w.cols()) + " b" + shape_str(bias.rows(), bias.cols()));
  }
  auto& g = x.graph();
  Matrix<Real> out = x.value() * w.value().transpose();
  out.rowwise() += bias.value().row(0);
  return g.emit(std::move(out), "affine", {x, w, bias},
                [x, w, bias](Graph<Real>& g, std::size_t self) {
                  const auto& d = g.grad(self);
                  if (g.needs_grad(x.id())) g.grad(x.id()).noalias() += d * w.value();
                  if (g.needs_grad(w.id())) g.grad(w.id()).noalias() += d.transpose() * x.value();
                  if (g.needs_grad(bias.id())) g.grad(bias.id()) += d.colwise().sum();
                });
}

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("add", a, b);
  auto& g = a.graph();
  Matrix<Real> out = a.value() + b.value();
  return g.emit(std::move(out), "add", {a, b}, [a, b](Graph<Real>& g, std::size_t self) {
    detail::accumulate(g, a, g.grad(self));
    detail::accumulate(g, b, g.grad(self));
  });
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("sub", a, b);
  auto& g = a.graph();
  Matrix<Real> out = a.value() - b.value();
  return g.emit(std::move(out), "sub", {a, b}, [a, b](Graph<Real>& g, std::size_t self) {
    detail::accumulate(g, a, g.grad(self));
    if (g.needs_grad(b.id())) g.grad(b.id()) -= g.grad(self);
  });
}

// Element-wise product.
template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("mul", a, b);
  auto& g = a.graph();
  Matrix<Real> out = a.value().cwiseProduct(b.value());
  return g.emit(std::move(out), "mul", {a, b}, [a, b](Graph<Real>& g, std::size_t self) {
    const auto& d = g.grad(self);
    if (g.needs_grad(a.id())) g.grad(a.id()) += d.cwiseProduct(b.value());
    if (g.needs_grad(b.id())) g.grad(b.id()) += d.cwiseProduct(a.value());
  });
}

template <class Real>
Var<Real> scale(Var<Real> a, Real s) {
  auto& g = a.graph();
  Matrix<Real> out = a.value() * s;
  return g.emit(std::move(out), "scale", {a}, [a, s](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()) += g.grad(self) * s;
  });
}

template <class Real>
Var<Real> add_scalar(Var<Real> a, Real s) {
  auto& g = a.graph();
  Matrix<Real> out = a.value().array() + s;
  return g.emit(std::move(out), "add_scalar", {a}, [a](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()) += g.grad(self);
  });
}

// Adds a 1 x C row to every row of a.
template <class Real>
Var<Real> add_row(Var<Real> a, Var<Real> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: shape mismatch " + shape_str(a.rows(), a.cols()) + " + " +
                     shape_str(row.rows(), row.cols()));
  }
  auto& g = a.graph();
  Matrix<Real> out = a.value();
  out.rowwise() += row.value().row(0);
  return g.emit(std::move(out), "add_row", {a, row}, [a, row](Graph<Real>& g, std::size_t self) {
    detail::accumulate(g, a, g.grad(self));
    if (g.needs_grad(row.id())) g.grad(row.id()) += g.grad(self).colwise().sum();
  });
}

template <class Real>
Var<Real> tanh(Var<Real> a) {
  auto& g = a.graph();
  Matrix<Real> out = a.value().array().tanh();
  return g.emit(std::move(out), "tanh", {a}, [a](Graph<Real>& g, std::size_t self) {
    const auto& y = g.value(self);
    g.grad(a.id()).array() += g.grad(self).array() * (Real(1) - y.array().square());
  });
}

template <class Real>
Var<Real> sigmoid(Var<Real> a) {
  auto& g = a.graph();
  Matrix<Real> out = (Real(1) + (-a.value().array()).exp()).inverse();
  return g.emit(std::move(out), "sigmoid", {a}, [a](Graph<Real>& g, std::size_t self) {
    const auto& y = g.value(self);
    g.grad(a.id()).array() += g.grad(self).array() * y.array() * (Real(1) - y.array());
  });
}

template <class Real>
Var<Real> relu(Var<Real> a) {
  auto& g = a.graph();
  Matrix<Real> out = a.value().cwiseMax(Real(0));
  return g.emit(std::move(out), "relu", {a}, [a](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()).array() +=
        (a.value().array() > Real(0)).select(g.grad(self).array(), Real(0));
  });
}

template <class Real>
Var<Real> exp(Var<Real> a) {
  auto& g = a.graph();
  Matrix<Real> out = a.value().array().exp();
  return g.emit(std::move(out), "exp", {a}, [a](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()).array() += g.grad(self).array() * g.value(self).array();
  });
}

template <class Real>
Var<Real> square(Var<Real> a) {
  auto& g = a.graph();
  Matrix<Real> out = a.value().array().square();
  return g.emit(std::move(out), "square", {a}, [a](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()).array() += Real(2) * g.grad(self).array() * a.value().array();
  });
}

// Numerically stable softmax. axis 0 normalises each column over rows,
// axis 1 normalises each row over columns.
template <class Real>
Var<Real> softmax(Var<Real> a, int axis) {
  if (axis != 0 && axis != 1) throw InvalidInput("softmax: axis must be 0 or 1");
  if (a.rows() == 0 || a.cols() == 0) throw ShapeError("softmax: empty input");
  auto& g = a.graph();
  Matrix<Real> out(a.rows(), a.cols());
  if (axis == 0) {
    for (Index c = 0; c < a.cols(); ++c) {
      auto col = a.value().col(c);
      const Real m = col.maxCoeff();
      out.col(c) = (col.array() - m).exp();
      out.col(c) /= out.col(c).sum();
    }
  } else {
    for (Index r = 0; r < a.rows(); ++r) {
      auto row = a.value().row(r);
      const Real m = row.maxCoeff();
      out.row(r) = (row.array() - m).exp();
      out.row(r) /= out.row(r).sum();
    }
  }
  return g.emit(std::move(out), "softmax", {a}, [a, axis](Graph<Real>& g, std::size_t self) {
    const auto& y = g.value(self);
    const auto& d = g.grad(self);
    Matrix<Real> yd = y.cwiseProduct(d);
    if (axis == 0) {
      Matrix<Real> s = yd.colwise().sum();
      for (Index r = 0; r < y.rows(); ++r) {
        g.grad(a.id()).row(r).array() += y.row(r).array() * (d.row(r) - s.row(0)).array();
      }
    } else {
      Matrix<Real> s = yd.rowwise().sum();
      for (Index c = 0; c < y.cols(); ++c) {
        g.grad(a.id()).col(c).array() += y.col(c).array() * (d.col(c) - s.col(0)).array();
      }
    }
  });
}

template <class Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
  auto& g = parts.front().graph();
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(rows, parts.front().cols()) +
                       " vs " + shape_str(p.rows(), p.cols()));
    }
    cols += p.cols();
  }
  Matrix<Real> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return g.emit(std::move(out), "concat_cols", parts, [parts](Graph<Real>& g, std::size_t self) {
    Index at = 0;
    for (const auto& p : parts) {
      if (g.needs_grad(p.id())) g.grad(p.id()) += g.grad(self).middleCols(at, p.cols());
      at += p.cols();
    }
  });
}

template <class Real>
Var<Real> concat_rows(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw InvalidInput("concat_rows: no inputs");
  auto& g = parts.front().graph();
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts.front().rows(), cols) +
                       " vs " + shape_str(p.rows(), p.cols()));
    }
    rows += p.rows();
  }
  Matrix<Real> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return g.emit(std::move(out), "concat_rows", parts, [parts](Graph<Real>& g, std::size_t self) {
    Index at = 0;
    for (const auto& p : parts) {
      if (g.needs_grad(p.id())) g.grad(p.id()) += g.grad(self).middleRows(at, p.rows());
      at += p.rows();
    }
  });
}

template <class Real>
Var<Real> slice_rows(Var<Real> a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of " + shape_str(a.rows(), a.cols()));
  }
  auto& g = a.graph();
  Matrix<Real> out = a.value().middleRows(begin, count);
  return g.emit(std::move(out), "slice_rows", {a}, [a, begin, count](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()).middleRows(begin, count) += g.grad(self);
  });
}

template <class Real>
Var<Real> slice_cols(Var<Real> a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of " + shape_str(a.rows(), a.cols()));
  }
  auto& g = a.graph();
  Matrix<Real> out = a.value().middleCols(begin, count);
  return g.emit(std::move(out), "slice_cols", {a}, [a, begin, count](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()).middleCols(begin, count) += g.grad(self);
  });
}

// Row lookup; with a parameter table this is a projection of one-hot ids.
template <class Real>
Var<Real> gather_rows(Var<Real> table, std::vector<Index> rows) {
  auto& g = table.graph();
  Matrix<Real> out(static_cast<Index>(rows.size()), table.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= table.rows()) {
      throw InvalidInput("gather_rows: row " + std::to_string(rows[i]) + " out of " +
                         shape_str(table.rows(), table.cols()));
    }
    out.row(static_cast<Index>(i)) = table.value().row(rows[i]);
  }
  return g.emit(std::move(out), "gather_rows", {table},
                [table, rows = std::move(rows)](Graph<Real>& g, std::size_t self) {
                  auto& gt = g.grad(table.id());
                  const auto& d = g.grad(self);
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    gt.row(rows[i]) += d.row(static_cast<Index>(i));
                  }
                });
}

// Row b of `a` (B x C) is repeated lengths[b] times; output is sum(lengths) x C.
template <class Real>
Var<Real> repeat_segments(Var<Real> a, const std::vector<Index>& lengths) {
  if (static_cast<Index>(lengths.size()) != a.rows()) {
    throw ShapeError("repeat_segments: " + std::to_string(lengths.size()) + " lengths for " +
                     shape_str(a.rows(), a.cols()));
  }
  auto& g = a.graph();
  Index total = 0;
  for (Index n : lengths) total += n;
  Matrix<Real> out(total, a.cols());
  Index at = 0;
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    for (Index t = 0; t < lengths[b]; ++t) out.row(at + t) = a.value().row(static_cast<Index>(b));
    at += lengths[b];
  }
  return g.emit(std::move(out), "repeat_segments", {a}, [a, lengths](Graph<Real>& g, std::size_t self) {
    const auto& d = g.grad(self);
    Index at = 0;
    for (std::size_t b = 0; b < lengths.size(); ++b) {
      g.grad(a.id()).row(static_cast<Index>(b)) += d.middleRows(at, lengths[b]).colwise().sum();
      at += lengths[b];
    }
  });
}

template <class Real>
Var<Real> repeat_rows(Var<Real> a, Index n) {
  return repeat_segments(a, std::vector<Index>{n});
}

template <class Real>
Var<Real> sum(Var<Real> a) {
  auto& g = a.graph();
  Matrix<Real> out(1, 1);
  out(0, 0) = a.value().sum();
  return g.emit(std::move(out), "sum", {a}, [a](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()).array() += g.grad(self)(0, 0);
  });
}

template <class Real>
Var<Real> mean(Var<Real> a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty input");
  return scale(sum(a), Real(1) / static_cast<Real>(a.value().size()));
}

// Reduces over rows: (N x C) -> (1 x C).
template <class Real>
Var<Real> sum_rows(Var<Real> a) {
  auto& g = a.graph();
  Matrix<Real> out = a.value().colwise().sum();
  return g.emit(std::move(out), "sum_rows", {a}, [a](Graph<Real>& g, std::size_t self) {
    g.grad(a.id()).rowwise() += g.grad(self).row(0);
  });
}

// Mean of squared differences over all elements.
template <class Real>
Var<Real> mse(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("mse", a, b);
  if (a.value().size() == 0) throw ShapeError("mse: empty input");
  auto& g = a.graph();
  const Real n = static_cast<Real>(a.value().size());
  Matrix<Real> out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm() / n;
  return g.emit(std::move(out), "mse", {a, b}, [a, b, n](Graph<Real>& g, std::size_t self) {
    const Real s = Real(2) * g.grad(self)(0, 0) / n;
    Matrix<Real> diff = a.value() - b.value();
    if (g.needs_grad(a.id())) g.grad(a.id()) += s * diff;
    if (g.needs_grad(b.id())) g.grad(b.id()) -= s * diff;
  });
}

}  // namespace sparsectl::diff
