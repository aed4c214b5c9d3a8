#pragma once

// Phone/speaker/style content encoders.

#include <string>
#include <vector>

#include "sparsectl/diff/layers.hpp"
#include "sparsectl/model/config.hpp"

namespace sparsectl::model {

template <class Real>
class ContentEncoder {
 public:
  Param<Real>* phone_table = nullptr;    // vocab x phone_dim (projection of the one-hot)
  Param<Real>* speaker_table = nullptr;  // speakers x speaker_dim
  Param<Real>* style_table = nullptr;    // styles x style_dim
  std::vector<diff::ConvBnRelu<Real>> banks;
  diff::Recurrent<Real> lstm;
  diff::Linear<Real> speaker_proj, style_proj;

  ContentEncoder() = default;
  ContentEncoder(ParamStore<Real>& store, const std::string& name, const ModelConfig& cfg,
                 diff::Rng& rng)
      : cfg_(cfg) {
    phone_table = &store.add(name + "/phone_embedding", cfg.vocab_size, cfg.phone_dim);
    diff::init_uniform(*phone_table, 1.0, rng);
    for (Index b = 0; b < cfg.conv_banks; ++b) {
      banks.emplace_back(store, name + "/conv" + std::to_string(b), cfg.phone_dim, cfg.kernel, rng);
    }
    lstm = diff::Recurrent<Real>(store, name + "/lstm", diff::CellKind::lstm,
                                 diff::Direction::bidirectional, cfg.phone_dim, cfg.phone_dim / 2, rng);
    speaker_table = &store.add(name + "/speaker_embedding", cfg.num_speakers, cfg.speaker_dim);
    diff::init_uniform(*speaker_table, 1.0, rng);
    style_table = &store.add(name + "/style_embedding", cfg.num_styles, cfg.style_dim);
    diff::init_uniform(*style_table, 1.0, rng);
    speaker_proj = diff::Linear<Real>(store, name + "/speaker_proj", cfg.speaker_dim, cfg.phone_dim, false, rng);
    style_proj = diff::Linear<Real>(store, name + "/style_proj", cfg.style_dim, cfg.phone_dim, false, rng);
  }

  // Stacked phone ids (sum of lengths rows) -> stacked N x phone_dim.
  Var<Real> encode_phones(Graph<Real>& g, const std::vector<int>& phone_ids,
                          const std::vector<Index>& lengths) const {
    std::vector<Index> rows;
    rows.reserve(phone_ids.size());
    for (int id : phone_ids) {
      if (id < 0 || id >= cfg_.vocab_size) {
        throw InvalidInput("unknown phone id " + std::to_string(id) + " (vocabulary " +
                           std::to_string(cfg_.vocab_size) + ")");
      }
      rows.push_back(id);
    }
    auto x = diff::gather_rows(g.param(*phone_table), std::move(rows));
    for (const auto& bank : banks) x = bank(g, x, lengths);
    return lstm(g, x, lengths);
  }

  Var<Real> encode_speaker(Graph<Real>& g, const std::vector<int>& speakers) const {
    return lookup(g, *speaker_table, speakers, cfg_.num_speakers, "speaker");
  }

  Var<Real> encode_style(Graph<Real>& g, const std::vector<int>& styles) const {
    return lookup(g, *style_table, styles, cfg_.num_styles, "style");
  }

  // phone_emb: N x C stacked; speaker/style: B x dims. Each utterance-level
  // vector is projected to C, repeated over its sentence and added.
  Var<Real> combine(Graph<Real>& g, Var<Real> phone_emb, Var<Real> speaker_emb, Var<Real> style_emb,
                    const std::vector<Index>& lengths) const {
    auto utt = diff::add(speaker_proj(g, speaker_emb), style_proj(g, style_emb));
    return diff::add(phone_emb, diff::repeat_segments(utt, lengths));
  }

  Var<Real> operator()(Graph<Real>& g, const std::vector<int>& phone_ids, const std::vector<int>& speakers,
                       const std::vector<int>& styles, const std::vector<Index>& lengths) const {
    return combine(g, encode_phones(g, phone_ids, lengths), encode_speaker(g, speakers),
                   encode_style(g, styles), lengths);
  }

 private:
  static Var<Real> lookup(Graph<Real>& g, Param<Real>& table, const std::vector<int>& ids, Index n,
                          const char* what) {
    std::vector<Index> rows;
    for (int id : ids) {
      if (id < 0 || id >= n) {
        throw InvalidInput(std::string("unknown ") + what + " id " + std::to_string(id) + " (have " +
                           std::to_string(n) + ")");
      }
      rows.push_back(id);
    }
    return diff::gather_rows(g.param(table), std::move(rows));
  }

  ModelConfig cfg_;
};

template <class Real>
class PafDecoder {
 public:
  std::vector<diff::Recurrent<Real>> grus;
  diff::Linear<Real> perceptron, head;

  PafDecoder() = default;
  PafDecoder(ParamStore<Real>& store, const std::string& name, const ModelConfig& cfg, diff::Rng& rng) {
    Index in = cfg.phone_dim + cfg.latent_dim();
    for (std::size_t i = 0; i < cfg.gru_widths.size(); ++i) {
      grus.emplace_back(store, name + "/gru" + std::to_string(i), diff::CellKind::gru,
                        diff::Direction::bidirectional, in, cfg.gru_widths[i], rng);
      in = grus.back().output_width();
    }
    perceptron = diff::Linear<Real>(store, name + "/perceptron", in, cfg.perceptron_dim, true, rng);
    head = diff::Linear<Real>(store, name + "/head", cfg.perceptron_dim, cfg.out_dim, true, rng);
  }

  // z: B x D' (one row per sentence); content: stacked N x C.
  Var<Real> operator()(Graph<Real>& g, Var<Real> z, Var<Real> content, const std::vector<Index>& lengths) const {
    auto x = diff::concat_cols<Real>({content, diff::repeat_segments(z, lengths)});
    for (const auto& gru : grus) x = gru(g, x, lengths);
    return head(g, diff::tanh(perceptron(g, x)));
  }
};

}  // namespace sparsectl::model
