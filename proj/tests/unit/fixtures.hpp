#pragma once

// Small corpora and model configs that train in well under a second.

#include "sparsectl/corpus/generate.hpp"
#include "sparsectl/corpus/normalize.hpp"
#include "sparsectl/model/config.hpp"
#include "sparsectl/train/trainer.hpp"

namespace sparsectl::testing {

inline corpus::CorpusProfile small_profile() {
  auto p = corpus::CorpusProfile::desk();
  p.sentences = 48;
  p.test_sentences = 8;
  p.val_sentences = 4;
  p.train_renditions = 2;
  p.renditions_per_test = 4;
  return p;
}

inline const corpus::Corpus& small_normalized() {
  static const corpus::Corpus c = [] {
    auto raw = corpus::generate_corpus(3, small_profile());
    return corpus::normalized(raw, corpus::compute_stats(raw));
  }();
  return c;
}

inline model::ModelConfig small_config(const corpus::CorpusProfile& p = small_profile()) {
  auto c = model::ModelConfig::desk(p.vocab_size, p.speakers, p.styles);
  c.phone_dim = 16;
  c.conv_banks = 1;
  c.speaker_dim = 4;
  c.style_dim = 4;
  c.gru_widths = {12, 8};
  c.perceptron_dim = 8;
  c.encoder.hidden = 16;
  c.encoder.value_dim = 8;
  c.encoder.gate_dim = 8;
  c.encoder.feature_dim = 4;
  c.encoder.position_dim = 4;
  c.encoder.latent_dim = 4;
  return c;
}

inline train::TrainSchedule small_schedule(int epochs = 2) {
  train::TrainSchedule s;
  s.epochs = epochs;
  s.seed = 5;
  return s;
}

}  // namespace sparsectl::testing
