#pragma once

// Dense masked-input baseline encoder.
// Input row t: [f0, energy, duration, m_f0, m_energy, m_duration]; m = 1 where
// the slot is driven, value columns are zero elsewhere.

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "sparsectl/diff/layers.hpp"
#include "sparsectl/model/config.hpp"
#include "sparsectl/model/driving.hpp"

namespace sparsectl::model {

inline constexpr Index kMaskedInputWidth = 2 * kNumStreams;

inline PafMatrix build_masked_input(const DrivingSet& ds, int T) {
  ds.validate(T);
  PafMatrix m = PafMatrix::Zero(T, kMaskedInputWidth);
  for (const auto& v : ds.values()) {
    const int s = stream_index(v.stream);
    m(v.position, s) = v.value;
    m(v.position, s + kNumStreams) = 1.0;
  }
  return m;
}

// `mask_percent` is the fraction of the 3T slots hidden from the encoder; each
// slot is kept independently with probability (100 - P)/100.
inline DrivingSet sample_training_mask(const PafMatrix& paf, double mask_percent, Rng& rng) {
  if (!(mask_percent >= 0.0 && mask_percent <= 100.0)) {
    throw InvalidInput("mask percent must lie in [0, 100]");
  }
  const double keep = 1.0 - mask_percent / 100.0;
  std::bernoulli_distribution coin(keep);
  DrivingSet ds;
  for (diff::Index t = 0; t < paf.rows(); ++t) {
    for (int s = 0; s < kNumStreams; ++s) {
      if (coin(rng)) ds.add(static_cast<int>(t), stream_from_index(s), paf(t, s));
    }
  }
  return ds;
}

inline Index mi_encoder_param_count(const MiEncoderConfig& c) {
  const Index H = c.hidden, D = c.value_dim, L = c.gate_dim;
  return H * (1 + c.position_dim + c.feature_dim) + 2 * L * H + D * H +
         (c.per_dimension ? D : 1) * L + 2 * c.latent_dim * D + kNumStreams * c.feature_dim + D;
}

// Bidirectional GRU stack of equal width W plus the two linear output heads
// (no bias, like U and S in the multiple-instance encoder).
inline Index masked_encoder_param_count(Index width, Index layers, Index latent) {
  Index total = 0;
  Index in = kMaskedInputWidth;
  for (Index l = 0; l < layers; ++l) {
    total += 2 * (3 * width * in + 3 * width * width + 6 * width);
    in = 2 * width;
  }
  return total + 2 * (2 * width * latent);
}

inline Index parity_width(const ModelConfig& cfg) {
  const Index target = mi_encoder_param_count(cfg.encoder);
  Index best = 1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (Index w = 1; w <= 512; ++w) {
    const auto n = masked_encoder_param_count(w, cfg.masked_layers, cfg.latent_dim());
    const double gap = std::abs(static_cast<double>(n) / static_cast<double>(target) - 1.0);
    if (gap < best_gap) {
      best_gap = gap;
      best = w;
    }
  }
  return best;
}

template <class Real>
class MaskedEncoder {
 public:
  struct Output {
    Var<Real> mu, logvar;
  };

  std::vector<diff::Recurrent<Real>> layers;
  diff::Linear<Real> mu_head, logvar_head;

  MaskedEncoder() = default;
  MaskedEncoder(ParamStore<Real>& store, const std::string& name, const ModelConfig& cfg, diff::Rng& rng) {
    width_ = cfg.masked_width > 0 ? cfg.masked_width : parity_width(cfg);
    Index in = kMaskedInputWidth;
    for (Index l = 0; l < cfg.masked_layers; ++l) {
      layers.emplace_back(store, name + "/gru" + std::to_string(l), diff::CellKind::gru,
                          diff::Direction::bidirectional, in, width_, rng);
      in = 2 * width_;
    }
    mu_head = diff::Linear<Real>(store, name + "/mu", 2 * width_, cfg.latent_dim(), false, rng);
    logvar_head = diff::Linear<Real>(store, name + "/logvar", 2 * width_, cfg.latent_dim(), false, rng);

    const double ratio = static_cast<double>(mi_encoder_param_count(cfg.encoder)) /
                         static_cast<double>(masked_encoder_param_count(width_, cfg.masked_layers, cfg.latent_dim()));
    if (ratio < 0.9 || ratio > 1.1) {
      throw InvalidInput("masked encoder width " + std::to_string(width_) +
                         " breaks parameter parity (ratio " + std::to_string(ratio) + ")");
    }
  }

  Index width() const { return width_; }

  // inputs: stacked N x 6 masked rows.
  Output operator()(Graph<Real>& g, Var<Real> inputs, const std::vector<Index>& lengths) const {
    auto x = inputs;
    for (const auto& layer : layers) x = layer(g, x, lengths);
    // Summary: forward state after the last row, backward state after the first.
    std::vector<Var<Real>> rows;
    Index offset = 0;
    for (Index T : lengths) {
      auto fwd = diff::slice_cols(diff::slice_rows(x, offset + T - 1, 1), 0, width_);
      auto bwd = diff::slice_cols(diff::slice_rows(x, offset, 1), width_, width_);
      rows.push_back(diff::concat_cols<Real>({fwd, bwd}));
      offset += T;
    }
    auto summary = rows.size() == 1 ? rows.front() : diff::concat_rows(rows);
    return {mu_head(g, summary), logvar_head(g, summary)};
  }

 private:
  Index width_ = 0;
};

}  // namespace sparsectl::model
