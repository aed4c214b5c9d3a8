#pragma once

// Multiple-instance encoder: bag of driving values -> latent Gaussian.
//
//   h_k = ReLU(E [x_k, p_k, f_k])
//   b_k = w . (tanh(Q h_k) * sigm(K h_k))          (scalar mode)
//   v_k = tanh(V h_k)
//   a   = softmax_k(b),  z' = sum_k a_k v_k
//   mu  = U z',  logvar = S z'
//
// In per-dimension mode w is D x L, b_k is D-dimensional and the softmax runs
// over k separately for every latent dimension.

#include <cmath>
#include <string>
#include <vector>

#include "sparsectl/diff/layers.hpp"
#include "sparsectl/diff/ops.hpp"
#include "sparsectl/model/driving.hpp"

namespace sparsectl::model {

using diff::Graph;
using diff::Index;
using diff::Matrix;
using diff::Param;
using diff::ParamStore;
using diff::Var;

struct MiEncoderConfig {
  Index hidden = 64;         // H
  Index value_dim = 32;      // D
  Index gate_dim = 64;       // L
  Index feature_dim = 8;     // F
  Index position_dim = 8;    // P
  Index latent_dim = 32;     // D'
  bool per_dimension = false;

  void validate() const {
    if (hidden < 1 || value_dim < 1 || gate_dim < 1 || feature_dim < 1 || latent_dim < 1) {
      throw InvalidInput("encoder dimensions must be positive");
    }
    if (position_dim < 2 || position_dim % 2 != 0) {
      throw InvalidInput("position_dim must be even and >= 2, got " + std::to_string(position_dim));
    }
  }
};

inline std::vector<double> positional_encoding(int t, Index P) {
  if (t < 0) throw InvalidInput("position must be >= 0");
  if (P < 2 || P % 2 != 0) throw InvalidInput("positional encoding width must be even, got " + std::to_string(P));
  std::vector<double> p(static_cast<std::size_t>(P));
  for (Index i = 0; i < P / 2; ++i) {
    const double rate = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(P));
    p[static_cast<std::size_t>(2 * i)] = std::sin(t / rate);
    p[static_cast<std::size_t>(2 * i + 1)] = std::cos(t / rate);
  }
  return p;
}

template <class Real>
class MiEncoder {
 public:
  struct Output {
    Var<Real> mu;      // B x D'
    Var<Real> logvar;  // B x D'
    Var<Real> summary; // B x D (z')
    // Per bag: attention weights (K x 1, or K x D in per-dimension mode) in
    // canonical order, and the canonical -> request index map.
    std::vector<Var<Real>> attention;
    std::vector<std::vector<std::size_t>> order;
  };

  Param<Real>* E = nullptr;
  Param<Real>* Q = nullptr;
  Param<Real>* K = nullptr;
  Param<Real>* V = nullptr;
  Param<Real>* w = nullptr;
  Param<Real>* U = nullptr;
  Param<Real>* S = nullptr;
  Param<Real>* features = nullptr;  // 3 x F, one row per stream
  Param<Real>* empty = nullptr;     // 1 x D, stands in for z' when K = 0

  MiEncoder() = default;
  MiEncoder(ParamStore<Real>& store, const std::string& name, MiEncoderConfig cfg, diff::Rng& rng)
      : cfg_(cfg) {
    cfg_.validate();
    const Index in = 1 + cfg_.position_dim + cfg_.feature_dim;
    E = &store.add(name + "/E", cfg_.hidden, in);
    Q = &store.add(name + "/Q", cfg_.gate_dim, cfg_.hidden);
    K = &store.add(name + "/K", cfg_.gate_dim, cfg_.hidden);
    V = &store.add(name + "/V", cfg_.value_dim, cfg_.hidden);
    w = &store.add(name + "/w", cfg_.per_dimension ? cfg_.value_dim : 1, cfg_.gate_dim);
    U = &store.add(name + "/U", cfg_.latent_dim, cfg_.value_dim);
    S = &store.add(name + "/S", cfg_.latent_dim, cfg_.value_dim);
    features = &store.add(name + "/features", kNumStreams, cfg_.feature_dim);
    empty = &store.add(name + "/empty", 1, cfg_.value_dim);
    for (auto* p : {E, Q, K, V, w, U, S}) diff::init_uniform_fan_in(*p, rng);
    diff::init_uniform(*features, 1.0, rng);
    diff::init_uniform(*empty, 0.5, rng);
  }

  const MiEncoderConfig& config() const { return cfg_; }

  // Row k = [x_k, p_k, f_k] for the given (already ordered) values.
  Var<Real> instance_inputs(Graph<Real>& g, const std::vector<DrivingValue>& vals) const {
    const auto n = static_cast<Index>(vals.size());
    Matrix<Real> xp(n, 1 + cfg_.position_dim);
    std::vector<Index> streams;
    streams.reserve(vals.size());
    for (Index k = 0; k < n; ++k) {
      const auto& v = vals[static_cast<std::size_t>(k)];
      xp(k, 0) = static_cast<Real>(v.value);
      const auto pe = positional_encoding(v.position, cfg_.position_dim);
      for (Index i = 0; i < cfg_.position_dim; ++i) xp(k, 1 + i) = static_cast<Real>(pe[static_cast<std::size_t>(i)]);
      streams.push_back(stream_index(v.stream));
    }
    auto f = diff::gather_rows(g.param(*features), streams);
    return diff::concat_cols<Real>({g.constant(std::move(xp)), f});
  }

  Var<Real> embed(Graph<Real>& g, Var<Real> inputs) const {
    return diff::relu(diff::matmul_nt(inputs, g.param(*E)));
  }

  Var<Real> score(Graph<Real>& g, Var<Real> h) const {
    auto gate = diff::mul(diff::tanh(diff::matmul_nt(h, g.param(*Q))),
                          diff::sigmoid(diff::matmul_nt(h, g.param(*K))));
    return diff::matmul_nt(gate, g.param(*w));
  }

  Var<Real> values(Graph<Real>& g, Var<Real> h) const {
    return diff::tanh(diff::matmul_nt(h, g.param(*V)));
  }

  // scores K x 1 (or K x D), vals K x D -> (z' 1 x D, weights).
  std::pair<Var<Real>, Var<Real>> aggregate(Var<Real> scores, Var<Real> vals) const {
    auto a = diff::softmax(scores, 0);
    if (cfg_.per_dimension) return {diff::sum_rows(diff::mul(a, vals)), a};
    return {diff::matmul_tn(a, vals), a};
  }

  Output encode(Graph<Real>& g, const std::vector<const DrivingSet*>& bags,
                const std::vector<int>& lengths) const {
    if (bags.size() != lengths.size()) throw InvalidInput("one sentence length per bag required");
    if (bags.empty()) throw InvalidInput("encode needs at least one bag");
    Output out;
    std::vector<DrivingValue> all;
    std::vector<Index> counts;
    for (std::size_t b = 0; b < bags.size(); ++b) {
      bags[b]->validate(lengths[b]);
      auto order = bags[b]->canonical_order();
      for (auto i : order) all.push_back((*bags[b])[i]);
      counts.push_back(static_cast<Index>(order.size()));
      out.order.push_back(std::move(order));
    }
    Var<Real> scores, vals;
    if (!all.empty()) {
      auto h = embed(g, instance_inputs(g, all));
      scores = score(g, h);
      vals = values(g, h);
    }
    std::vector<Var<Real>> rows;
    Index offset = 0;
    for (Index n : counts) {
      if (n == 0) {
        rows.push_back(g.param(*empty));
        out.attention.emplace_back();
        continue;
      }
      auto [z, a] = aggregate(diff::slice_rows(scores, offset, n), diff::slice_rows(vals, offset, n));
      rows.push_back(z);
      out.attention.push_back(a);
      offset += n;
    }
    out.summary = rows.size() == 1 ? rows.front() : diff::concat_rows(rows);
    out.mu = diff::matmul_nt(out.summary, g.param(*U));
    out.logvar = diff::matmul_nt(out.summary, g.param(*S));
    return out;
  }

  Output encode(Graph<Real>& g, const DrivingSet& bag, int T) const {
    return encode(g, std::vector<const DrivingSet*>{&bag}, std::vector<int>{T});
  }

  // Attention weights of one bag mapped back to request order (scalar mode:
  // K entries; per-dimension mode: the mean over latent dimensions).
  static std::vector<double> request_order_weights(const Output& out, std::size_t bag) {
    const auto& order = out.order.at(bag);
    std::vector<double> w(order.size(), 0.0);
    if (order.empty()) return w;
    const auto& a = out.attention.at(bag).value();
    for (std::size_t c = 0; c < order.size(); ++c) {
      w[order[c]] = static_cast<double>(a.row(static_cast<Index>(c)).mean());
    }
    return w;
  }

 private:
  MiEncoderConfig cfg_;
};

}  // namespace sparsectl::model
