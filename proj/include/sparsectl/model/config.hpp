#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sparsectl/model/mi_encoder.hpp"

namespace sparsectl::model {

enum class Family { micvae, masked, nocontrol };

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::micvae:
      return "micvae";
    case Family::masked:
      return "masked";
    case Family::nocontrol:
      return "nocontrol";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "micvae") return Family::micvae;
  if (s == "masked") return Family::masked;
  if (s == "nocontrol") return Family::nocontrol;
  throw InvalidInput("unknown model family '" + std::string(s) + "' (expected micvae|masked|nocontrol)");
}

struct ModelConfig {
  std::string scale = "desk";
  Index vocab_size = 40;
  Index num_speakers = 8;
  Index num_styles = 3;
  Index phone_dim = 192;
  Index conv_banks = 3;
  Index kernel = 5;
  Index speaker_dim = 16;
  Index style_dim = 8;
  std::vector<Index> gru_widths{32, 32, 16, 16};
  Index perceptron_dim = 16;
  Index out_dim = 3;
  MiEncoderConfig encoder;  // latent width lives here (encoder.latent_dim)
  Index masked_layers = 2;
  Index masked_width = 0;   // 0 = chosen for parameter parity with the MI encoder

  Index latent_dim() const { return encoder.latent_dim; }

  static ModelConfig desk(Index vocab, Index speakers, Index styles) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.num_speakers = speakers;
    c.num_styles = styles;
    c.encoder.per_dimension = true;
    return c;
  }

  static ModelConfig paper(Index vocab, Index speakers, Index styles) {
    ModelConfig c = desk(vocab, speakers, styles);
    c.scale = "paper";
    c.phone_dim = 384;
    c.speaker_dim = 32;
    c.style_dim = 16;
    c.gru_widths = {64, 64, 32, 32};
    return c;
  }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw InvalidInput("invalid model config: " + msg);
    };
    need(vocab_size >= 1 && num_speakers >= 1 && num_styles >= 1, "vocabulary sizes must be >= 1");
    need(phone_dim >= 2 && phone_dim % 2 == 0, "phone_dim must be even (bi-LSTM halves)");
    need(conv_banks >= 0 && kernel >= 1 && kernel % 2 == 1, "kernel must be odd");
    need(speaker_dim >= 1 && style_dim >= 1 && perceptron_dim >= 1, "embedding widths must be >= 1");
    need(!gru_widths.empty(), "at least one decoder GRU layer");
    for (auto w : gru_widths) need(w >= 1, "GRU widths must be >= 1");
    need(out_dim == kNumStreams, "out_dim must be 3");
    if (scale == "paper") need(gru_widths.size() == 4, "paper mode uses 4 decoder GRU layers");
    need(masked_layers >= 1 && masked_width >= 0, "masked encoder needs >= 1 layer");
    encoder.validate();
  }
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"scale", c.scale},
          {"vocab_size", c.vocab_size},
          {"num_speakers", c.num_speakers},
          {"num_styles", c.num_styles},
          {"phone_dim", c.phone_dim},
          {"conv_banks", c.conv_banks},
          {"kernel", c.kernel},
          {"speaker_dim", c.speaker_dim},
          {"style_dim", c.style_dim},
          {"gru_widths", c.gru_widths},
          {"perceptron_dim", c.perceptron_dim},
          {"out_dim", c.out_dim},
          {"encoder",
           {{"H", c.encoder.hidden},
            {"D", c.encoder.value_dim},
            {"L", c.encoder.gate_dim},
            {"F", c.encoder.feature_dim},
            {"P", c.encoder.position_dim},
            {"latent_dim", c.encoder.latent_dim},
            {"per_dimension", c.encoder.per_dimension}}},
          {"masked_layers", c.masked_layers},
          {"masked_width", c.masked_width}};
}

// Missing keys keep the value from `base`.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  auto get = [&](const nlohmann::json& o, const char* key, auto& field) {
    if (o.contains(key)) field = o.at(key).get<std::decay_t<decltype(field)>>();
  };
  get(j, "scale", c.scale);
  get(j, "vocab_size", c.vocab_size);
  get(j, "num_speakers", c.num_speakers);
  get(j, "num_styles", c.num_styles);
  get(j, "phone_dim", c.phone_dim);
  get(j, "conv_banks", c.conv_banks);
  get(j, "kernel", c.kernel);
  get(j, "speaker_dim", c.speaker_dim);
  get(j, "style_dim", c.style_dim);
  get(j, "gru_widths", c.gru_widths);
  get(j, "perceptron_dim", c.perceptron_dim);
  get(j, "out_dim", c.out_dim);
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    get(e, "H", c.encoder.hidden);
    get(e, "D", c.encoder.value_dim);
    get(e, "L", c.encoder.gate_dim);
    get(e, "F", c.encoder.feature_dim);
    get(e, "P", c.encoder.position_dim);
    get(e, "latent_dim", c.encoder.latent_dim);
    get(e, "per_dimension", c.encoder.per_dimension);
  }
  get(j, "masked_layers", c.masked_layers);
  get(j, "masked_width", c.masked_width);
  return c;
}

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_fingerprint(Family f, const ModelConfig& c) {
  const auto text = std::string(family_name(f)) + ":" + to_json(c).dump();
  static constexpr char hex[] = "0123456789abcdef";
  auto h = fnv1a64(text);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xF];
  return out;
}

}  // namespace sparsectl::model
