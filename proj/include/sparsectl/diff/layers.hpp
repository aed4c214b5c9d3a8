#pragma once

// Fused layer ops over segmented sequences.
//
// A batch of variable-length sequences is stored as one stacked (N x C) matrix
// plus a list of segment lengths summing to N. Convolutions pad with zeros at
// segment boundaries and recurrences restart from a zero state per segment, so
// segments never see each other. Batch norm is the only op that pools
// statistics across segments.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "sparsectl/diff/ops.hpp"

namespace sparsectl::diff {

namespace detail {

inline Index total_length(const std::vector<Index>& lengths, Index rows, const char* op) {
  Index total = 0;
  for (Index n : lengths) {
    if (n < 1) throw InvalidInput(std::string(op) + ": empty sequence (T = 0)");
    total += n;
  }
  if (total != rows) {
    throw ShapeError(std::string(op) + ": segment lengths sum to " + std::to_string(total) +
                     " but input has " + std::to_string(rows) + " rows");
  }
  return total;
}

template <class Derived>
auto sigm(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) + (-x).exp()).inverse();
}

}  // namespace detail

// 1-D convolution with odd kernel and same-length zero padding.
// w is (Cout x kernel*Cin), row layout [tap0 channels | tap1 channels | ...].
template <class Real>
Var<Real> conv1d_same(Var<Real> x, Var<Real> w, Var<Real> bias, Index kernel,
                      const std::vector<Index>& lengths) {
  detail::total_length(lengths, x.rows(), "conv1d");
  const Index cin = x.cols();
  if (kernel % 2 == 0) throw InvalidInput("conv1d: kernel must be odd");
  if (w.cols() != kernel * cin || bias.rows() != 1 || bias.cols() != w.rows()) {
    throw ShapeError("conv1d: shape mismatch x" + shape_str(x.rows(), cin) + " W" +
                     shape_str(w.rows(), w.cols()) + " b" + shape_str(bias.rows(), bias.cols()) +
                     " kernel " + std::to_string(kernel));
  }
  auto& g = x.graph();
  const Index half = kernel / 2;
  auto cols = std::make_shared<Matrix<Real>>(Matrix<Real>::Zero(x.rows(), kernel * cin));
  Index off = 0;
  for (Index len : lengths) {
    for (Index t = 0; t < len; ++t) {
      for (Index j = 0; j < kernel; ++j) {
        const Index src = t + j - half;
        if (src >= 0 && src < len) cols->block(off + t, j * cin, 1, cin) = x.value().row(off + src);
      }
    }
    off += len;
  }
  Matrix<Real> out = *cols * w.value().transpose();
  out.rowwise() += bias.value().row(0);
  return g.emit(std::move(out), "conv1d", {x, w, bias},
                [x, w, bias, cols, kernel, half, cin, lengths](Graph<Real>& g, std::size_t self) {
                  const auto& d = g.grad(self);
                  if (g.needs_grad(w.id())) g.grad(w.id()).noalias() += d.transpose() * (*cols);
                  if (g.needs_grad(bias.id())) g.grad(bias.id()) += d.colwise().sum();
                  if (!g.needs_grad(x.id())) return;
                  Matrix<Real> dcols = d * w.value();
                  auto& dx = g.grad(x.id());
                  Index off = 0;
                  for (Index len : lengths) {
                    for (Index t = 0; t < len; ++t) {
                      for (Index j = 0; j < kernel; ++j) {
                        const Index src = t + j - half;
                        if (src >= 0 && src < len) {
                          dx.row(off + src) += dcols.block(off + t, j * cin, 1, cin);
                        }
                      }
                    }
                    off += len;
                  }
                });
}

// Per-channel batch normalisation over all rows. In train mode the batch
// statistics are used and the running statistics are updated with an
// exponential moving average; in eval mode only the running statistics are used.
template <class Real>
Var<Real> batch_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Param<Real>& running_mean,
                     Param<Real>& running_var, Real momentum = Real(0.9), Real eps = Real(1e-5)) {
  const Index n = x.rows();
  const Index c = x.cols();
  if (gamma.cols() != c || beta.cols() != c || running_mean.value.cols() != c ||
      running_var.value.cols() != c) {
    throw ShapeError("batch_norm: channel mismatch for input " + shape_str(n, c));
  }
  auto& g = x.graph();
  Matrix<Real> mean_row(1, c);
  Matrix<Real> inv_std(1, c);
  const bool train = g.training();
  if (train) {
    mean_row = x.value().colwise().mean();
    Matrix<Real> centered = x.value().rowwise() - mean_row.row(0);
    Matrix<Real> var = (centered.array().square().colwise().sum() / static_cast<Real>(n)).matrix();
    inv_std = (var.array() + eps).rsqrt().matrix();
    const Real unbias = n > 1 ? static_cast<Real>(n) / static_cast<Real>(n - 1) : Real(1);
    running_mean.value = momentum * running_mean.value + (Real(1) - momentum) * mean_row;
    running_var.value = momentum * running_var.value + (Real(1) - momentum) * unbias * var;
  } else {
    mean_row = running_mean.value;
    inv_std = (running_var.value.array() + eps).rsqrt().matrix();
  }
  auto xhat = std::make_shared<Matrix<Real>>(
      ((x.value().rowwise() - mean_row.row(0)).array().rowwise() * inv_std.row(0).array()).matrix());
  Matrix<Real> out = (xhat->array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return g.emit(std::move(out), "batch_norm", {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std, train, n](Graph<Real>& g, std::size_t self) {
                  const auto& d = g.grad(self);
                  if (g.needs_grad(gamma.id())) {
                    g.grad(gamma.id()) += d.cwiseProduct(*xhat).colwise().sum();
                  }
                  if (g.needs_grad(beta.id())) g.grad(beta.id()) += d.colwise().sum();
                  if (!g.needs_grad(x.id())) return;
                  Matrix<Real> dxhat = (d.array().rowwise() * gamma.value().row(0).array()).matrix();
                  if (!train) {
                    g.grad(x.id()).array() += dxhat.array().rowwise() * inv_std.row(0).array();
                    return;
                  }
                  const Real nn = static_cast<Real>(n);
                  Matrix<Real> s1 = dxhat.colwise().sum();
                  Matrix<Real> s2 = dxhat.cwiseProduct(*xhat).colwise().sum();
                  Matrix<Real> dx = nn * dxhat;
                  dx.rowwise() -= s1.row(0);
                  dx.array() -= xhat->array().rowwise() * s2.row(0).array();
                  dx.array().rowwise() *= inv_std.row(0).array() / nn;
                  g.grad(x.id()) += dx;
                });
}

// Single-direction LSTM over segments. w_ih (4H x in), w_hh (4H x H),
// bias (1 x 4H); gate order i, f, g, o. Output is N x H.
template <class Real>
Var<Real> lstm(Var<Real> x, Var<Real> w_ih, Var<Real> w_hh, Var<Real> bias,
               const std::vector<Index>& lengths, bool reverse) {
  detail::total_length(lengths, x.rows(), "lstm");
  const Index h = w_hh.cols();
  if (w_ih.rows() != 4 * h || w_ih.cols() != x.cols() || w_hh.rows() != 4 * h ||
      bias.cols() != 4 * h) {
    throw ShapeError("lstm: shape mismatch x" + shape_str(x.rows(), x.cols()) + " W_ih" +
                     shape_str(w_ih.rows(), w_ih.cols()) + " W_hh" +
                     shape_str(w_hh.rows(), w_hh.cols()));
  }
  auto& g = x.graph();
  const Index n = x.rows();
  struct Tape {
    Matrix<Real> gates;  // post-activation i, f, g, o
    Matrix<Real> cell;
    Matrix<Real> tanh_cell;
  };
  auto tape = std::make_shared<Tape>();
  Matrix<Real> pre = x.value() * w_ih.value().transpose();
  pre.rowwise() += bias.value().row(0);
  tape->gates.resize(n, 4 * h);
  tape->cell.resize(n, h);
  tape->tanh_cell.resize(n, h);
  Matrix<Real> out(n, h);
  Matrix<Real> hp(1, h), cp(1, h), gt(1, 4 * h);
  Index off = 0;
  for (Index len : lengths) {
    hp.setZero();
    cp.setZero();
    for (Index s = 0; s < len; ++s) {
      const Index r = off + (reverse ? len - 1 - s : s);
      gt.noalias() = pre.row(r) + hp * w_hh.value().transpose();
      auto a = gt.array();
      a.leftCols(2 * h) = detail::sigm(a.leftCols(2 * h));
      a.middleCols(2 * h, h) = a.middleCols(2 * h, h).tanh();
      a.rightCols(h) = detail::sigm(a.rightCols(h));
      cp = (a.middleCols(h, h) * cp.array() + a.leftCols(h) * a.middleCols(2 * h, h)).matrix();
      tape->gates.row(r) = gt;
      tape->cell.row(r) = cp;
      tape->tanh_cell.row(r) = cp.array().tanh().matrix();
      hp = (a.rightCols(h) * tape->tanh_cell.row(r).array()).matrix();
      out.row(r) = hp;
    }
    off += len;
  }
  return g.emit(
      std::move(out), "lstm", {x, w_ih, w_hh, bias},
      [x, w_ih, w_hh, bias, tape, lengths, reverse, h](Graph<Real>& g, std::size_t self) {
        const auto& dy = g.grad(self);
        const auto& y = g.value(self);
        const Index n = dy.rows();
        Matrix<Real> dpre(n, 4 * h);
        Matrix<Real> dh(1, h), dc(1, h), dg(1, 4 * h);
        Matrix<Real> dw_hh = Matrix<Real>::Zero(4 * h, h);
        Index off = 0;
        for (Index len : lengths) {
          dh.setZero();
          dc.setZero();
          for (Index s = len; s-- > 0;) {
            const Index r = off + (reverse ? len - 1 - s : s);
            const bool has_prev = s > 0;
            const Index rp = off + (reverse ? len - s : s - 1);
            auto gates = tape->gates.row(r).array();
            auto i = gates.leftCols(h);
            auto f = gates.middleCols(h, h);
            auto gg = gates.middleCols(2 * h, h);
            auto o = gates.rightCols(h);
            auto tc = tape->tanh_cell.row(r).array();
            dh += dy.row(r);
            auto dga = dg.array();
            dga.rightCols(h) = dh.array() * tc * o * (Real(1) - o);
            dc.array() += dh.array() * o * (Real(1) - tc.square());
            dga.leftCols(h) = dc.array() * gg * i * (Real(1) - i);
            if (has_prev) {
              dga.middleCols(h, h) = dc.array() * tape->cell.row(rp).array() * f * (Real(1) - f);
            } else {
              dga.middleCols(h, h).setZero();
            }
            dga.middleCols(2 * h, h) = dc.array() * i * (Real(1) - gg.square());
            dc = (dc.array() * f).matrix();
            dpre.row(r) = dg;
            if (has_prev) {
              dw_hh.noalias() += dg.transpose() * y.row(rp);
              dh.noalias() = dg * w_hh.value();
            } else {
              dh.setZero();
            }
          }
          off += len;
        }
        if (g.needs_grad(w_hh.id())) g.grad(w_hh.id()) += dw_hh;
        if (g.needs_grad(bias.id())) g.grad(bias.id()) += dpre.colwise().sum();
        if (g.needs_grad(w_ih.id())) g.grad(w_ih.id()).noalias() += dpre.transpose() * x.value();
        if (g.needs_grad(x.id())) g.grad(x.id()).noalias() += dpre * w_ih.value();
      });
}

// Single-direction GRU over segments (reset gate applied after the hidden
// projection). w_ih (3H x in), w_hh (3H x H), biases (1 x 3H); gate order r, z, n.
template <class Real>
Var<Real> gru(Var<Real> x, Var<Real> w_ih, Var<Real> w_hh, Var<Real> b_ih, Var<Real> b_hh,
              const std::vector<Index>& lengths, bool reverse) {
  detail::total_length(lengths, x.rows(), "gru");
  const Index h = w_hh.cols();
  if (w_ih.rows() != 3 * h || w_ih.cols() != x.cols() || w_hh.rows() != 3 * h ||
      b_ih.cols() != 3 * h || b_hh.cols() != 3 * h) {
    throw ShapeError("gru: shape mismatch x" + shape_str(x.rows(), x.cols()) + " W_ih" +
                     shape_str(w_ih.rows(), w_ih.cols()) + " W_hh" +
                     shape_str(w_hh.rows(), w_hh.cols()));
  }
  auto& g = x.graph();
  const Index n = x.rows();
  struct Tape {
    Matrix<Real> gates;   // r, z, n post-activation
    Matrix<Real> hidden;  // h_prev * W_hn^T + b_hn
  };
  auto tape = std::make_shared<Tape>();
  Matrix<Real> px = x.value() * w_ih.value().transpose();
  px.rowwise() += b_ih.value().row(0);
  tape->gates.resize(n, 3 * h);
  tape->hidden.resize(n, h);
  Matrix<Real> out(n, h);
  Matrix<Real> hp(1, h), ph(1, 3 * h), gt(1, 3 * h);
  Index off = 0;
  for (Index len : lengths) {
    hp.setZero();
    for (Index s = 0; s < len; ++s) {
      const Index r = off + (reverse ? len - 1 - s : s);
      ph.noalias() = hp * w_hh.value().transpose();
      ph += b_hh.value();
      auto a = gt.array();
      a.leftCols(2 * h) = detail::sigm(px.row(r).leftCols(2 * h).array() + ph.leftCols(2 * h).array());
      a.rightCols(h) = (px.row(r).rightCols(h).array() + a.leftCols(h) * ph.rightCols(h).array()).tanh();
      tape->gates.row(r) = gt;
      tape->hidden.row(r) = ph.rightCols(h);
      hp = ((Real(1) - a.middleCols(h, h)) * a.rightCols(h) + a.middleCols(h, h) * hp.array()).matrix();
      out.row(r) = hp;
    }
    off += len;
  }
  return g.emit(
      std::move(out), "gru", {x, w_ih, w_hh, b_ih, b_hh},
      [x, w_ih, w_hh, b_ih, b_hh, tape, lengths, reverse, h](Graph<Real>& g, std::size_t self) {
        const auto& dy = g.grad(self);
        const auto& y = g.value(self);
        const Index n = dy.rows();
        Matrix<Real> dpx(n, 3 * h);
        Matrix<Real> dph(1, 3 * h);
        Matrix<Real> dh(1, h), hprev(1, h);
        Matrix<Real> dw_hh = Matrix<Real>::Zero(3 * h, h);
        Matrix<Real> db_hh = Matrix<Real>::Zero(1, 3 * h);
        Index off = 0;
        for (Index len : lengths) {
          dh.setZero();
          for (Index s = len; s-- > 0;) {
            const Index r = off + (reverse ? len - 1 - s : s);
            const bool has_prev = s > 0;
            if (has_prev) {
              hprev = y.row(off + (reverse ? len - s : s - 1));
            } else {
              hprev.setZero();
            }
            auto gates = tape->gates.row(r).array();
            auto rg = gates.leftCols(h);
            auto z = gates.middleCols(h, h);
            auto nn = gates.rightCols(h);
            dh += dy.row(r);
            auto dhp = dpx.row(r).array();
            // n pre-activation
            dhp.rightCols(h) = dh.array() * (Real(1) - z) * (Real(1) - nn.square());
            // z pre-activation
            dhp.middleCols(h, h) = dh.array() * (hprev.array() - nn) * z * (Real(1) - z);
            // r pre-activation
            dhp.leftCols(h) = dhp.rightCols(h) * tape->hidden.row(r).array() * rg * (Real(1) - rg);
            dph.leftCols(2 * h) = dpx.row(r).leftCols(2 * h);
            dph.rightCols(h) = (dpx.row(r).rightCols(h).array() * rg).matrix();
            db_hh += dph;
            dh = (dh.array() * z).matrix();
            if (has_prev) {
              dw_hh.noalias() += dph.transpose() * hprev;
              dh.noalias() += dph * w_hh.value();
            }
          }
          off += len;
        }
        if (g.needs_grad(w_hh.id())) g.grad(w_hh.id()) += dw_hh;
        if (g.needs_grad(b_hh.id())) g.grad(b_hh.id()) += db_hh;
        if (g.needs_grad(b_ih.id())) g.grad(b_ih.id()) += dpx.colwise().sum();
        if (g.needs_grad(w_ih.id())) g.grad(w_ih.id()).noalias() += dpx.transpose() * x.value();
        if (g.needs_grad(x.id())) g.grad(x.id()).noalias() += dpx * w_ih.value();
      });
}

// ---------------------------------------------------------------------------
// Parameterised modules. Each registers its parameters under a name prefix.

template <class Real>
struct Linear {
  Param<Real>* weight = nullptr;
  Param<Real>* bias = nullptr;

  Linear() = default;
  Linear(ParamStore<Real>& store, const std::string& name, Index in, Index out, bool with_bias,
         Rng& rng) {
    weight = &store.add(name + "/weight", out, in);
    init_uniform_fan_in(*weight, rng);
    if (with_bias) bias = &store.add(name + "/bias", 1, out);
  }

  Var<Real> operator()(Graph<Real>& g, Var<Real> x) const {
    if (bias == nullptr) return affine(x, g.param(*weight));
    return affine(x, g.param(*weight), g.param(*bias));
  }
};

template <class Real>
struct ConvBnRelu {
  Param<Real>* weight = nullptr;
  Param<Real>* bias = nullptr;
  Param<Real>* gamma = nullptr;
  Param<Real>* beta = nullptr;
  Param<Real>* running_mean = nullptr;
  Param<Real>* running_var = nullptr;
  Index kernel = 5;

  ConvBnRelu() = default;
  ConvBnRelu(ParamStore<Real>& store, const std::string& name, Index channels, Index kernel_size,
             Rng& rng)
      : kernel(kernel_size) {
    weight = &store.add(name + "/weight", channels, kernel * channels);
    init_uniform_fan_in(*weight, rng);
    bias = &store.add(name + "/bias", 1, channels);
    gamma = &store.add(name + "/bn_gamma", 1, channels);
    gamma->value.setOnes();
    beta = &store.add(name + "/bn_beta", 1, channels);
    running_mean = &store.add(name + "/bn_running_mean", 1, channels, false);
    running_var = &store.add(name + "/bn_running_var", 1, channels, false);
    running_var->value.setOnes();
  }

  Var<Real> operator()(Graph<Real>& g, Var<Real> x, const std::vector<Index>& lengths) const {
    auto y = conv1d_same(x, g.param(*weight), g.param(*bias), kernel, lengths);
    y = batch_norm(y, g.param(*gamma), g.param(*beta), *running_mean, *running_var);
    return relu(y);
  }
};

enum class CellKind { lstm, gru };
enum class Direction { forward, backward, bidirectional };

// One recurrent layer; bidirectional output is [forward | backward].
template <class Real>
struct Recurrent {
  struct Weights {
    Param<Real>* w_ih = nullptr;
    Param<Real>* w_hh = nullptr;
    Param<Real>* b_ih = nullptr;
    Param<Real>* b_hh = nullptr;  // GRU only
  };
  CellKind kind = CellKind::gru;
  Direction direction = Direction::bidirectional;
  Index width = 0;
  Weights fwd, bwd;

  Recurrent() = default;
  Recurrent(ParamStore<Real>& store, const std::string& name, CellKind cell, Direction dir,
            Index in, Index hidden, Rng& rng)
      : kind(cell), direction(dir), width(hidden) {
    if (dir != Direction::backward) fwd = make(store, name + "/fwd", in, rng);
    if (dir != Direction::forward) bwd = make(store, name + "/bwd", in, rng);
  }

  Index output_width() const { return direction == Direction::bidirectional ? 2 * width : width; }

  Var<Real> operator()(Graph<Real>& g, Var<Real> x, const std::vector<Index>& lengths) const {
    switch (direction) {
      case Direction::forward:
        return run(g, fwd, x, lengths, false);
      case Direction::backward:
        return run(g, bwd, x, lengths, true);
      case Direction::bidirectional:
        break;
    }
    return concat_cols<Real>({run(g, fwd, x, lengths, false), run(g, bwd, x, lengths, true)});
  }

 private:
  Weights make(ParamStore<Real>& store, const std::string& name, Index in, Rng& rng) const {
    const Index gates = kind == CellKind::lstm ? 4 : 3;
    Weights w;
    w.w_ih = &store.add(name + "/w_ih", gates * width, in);
    w.w_hh = &store.add(name + "/w_hh", gates * width, width);
    init_uniform_fan_in(*w.w_ih, rng);
    init_uniform_fan_in(*w.w_hh, rng);
    w.b_ih = &store.add(name + "/b_ih", 1, gates * width);
    if (kind == CellKind::gru) w.b_hh = &store.add(name + "/b_hh", 1, gates * width);
    return w;
  }

  Var<Real> run(Graph<Real>& g, const Weights& w, Var<Real> x, const std::vector<Index>& lengths,
                bool reverse) const {
    if (kind == CellKind::lstm) {
      return lstm(x, g.param(*w.w_ih), g.param(*w.w_hh), g.param(*w.b_ih), lengths, reverse);
    }
    return gru(x, g.param(*w.w_ih), g.param(*w.w_hh), g.param(*w.b_ih), g.param(*w.b_hh), lengths,
               reverse);
  }
};

}  // namespace sparsectl::diff
