#pragma once

// The three model families share the content encoder and PAF decoder and
// differ only in how the latent is produced:
//   micvae    multiple-instance encoder over the driving bag
//   masked    recurrent encoder over the dense masked input
//   nocontrol no encoder; the latent slot is fed zeros

#include <optional>
#include <string>
#include <vector>

#include "sparsectl/model/content.hpp"
#include "sparsectl/model/latent.hpp"
#include "sparsectl/model/masked_encoder.hpp"
#include "sparsectl/model/mi_encoder.hpp"

namespace sparsectl::model {

struct ModelInput {
  std::vector<int> phone_ids;
  int speaker = 0;
  int style = 0;
  DrivingSet driving;

  int length() const { return static_cast<int>(phone_ids.size()); }
};

enum class LatentMode { mean, sample };

struct Prediction {
  PafMatrix paf;                  // T x 3, normalized units
  std::vector<double> mu;         // empty for nocontrol
  std::vector<double> logvar;
  std::vector<double> attention;  // request order; micvae only
};

template <class Real>
class ProsodyModel {
 public:
  struct Forward {
    Var<Real> pred;  // stacked N x 3
    Var<Real> mu, logvar;
    bool has_latent = false;
    std::vector<Index> lengths;
    std::optional<typename MiEncoder<Real>::Output> mi;
  };

  ProsodyModel(Family family, ModelConfig cfg, std::uint64_t seed) : family_(family), cfg_(std::move(cfg)) {
    cfg_.validate();
    diff::Rng rng(seed);
    content_ = ContentEncoder<Real>(store_, "content", cfg_, rng);
    decoder_ = PafDecoder<Real>(store_, "decoder", cfg_, rng);
    if (family_ == Family::micvae) mi_ = MiEncoder<Real>(store_, "mi_encoder", cfg_.encoder, rng);
    if (family_ == Family::masked) {
      masked_ = MaskedEncoder<Real>(store_, "masked_encoder", cfg_, rng);
      cfg_.masked_width = masked_.width();
    }
  }

  ProsodyModel(ProsodyModel&&) noexcept = default;
  ProsodyModel& operator=(ProsodyModel&&) noexcept = default;

  Family family() const { return family_; }
  const ModelConfig& config() const { return cfg_; }
  ParamStore<Real>& params() { return store_; }
  const ParamStore<Real>& params() const { return store_; }
  std::string fingerprint() const { return config_fingerprint(family_, cfg_); }
  bool accepts_driving() const { return family_ != Family::nocontrol; }

  std::size_t encoder_param_count() const {
    switch (family_) {
      case Family::micvae:
        return store_.count(true, "mi_encoder/");
      case Family::masked:
        return store_.count(true, "masked_encoder/");
      case Family::nocontrol:
        return 0;
    }
    return 0;
  }

  const MiEncoder<Real>& mi_encoder() const { return mi_; }
  const ContentEncoder<Real>& content() const { return content_; }

  Forward forward(Graph<Real>& g, const std::vector<ModelInput>& batch, LatentMode mode, Rng* noise) const {
    if (batch.empty()) throw InvalidInput("empty batch");
    Forward f;
    std::vector<int> phones, speakers, styles, lens;
    for (const auto& in : batch) {
      if (in.phone_ids.empty()) throw InvalidInput("sentence length must be >= 1");
      phones.insert(phones.end(), in.phone_ids.begin(), in.phone_ids.end());
      speakers.push_back(in.speaker);
      styles.push_back(in.style);
      lens.push_back(in.length());
      f.lengths.push_back(in.length());
      if (family_ == Family::nocontrol && !in.driving.empty()) {
        throw InvalidInput("nocontrol model takes no driving values (use crude control)");
      }
    }
    auto content = content_(g, phones, speakers, styles, f.lengths);

    Var<Real> z;
    switch (family_) {
      case Family::micvae: {
        std::vector<const DrivingSet*> bags;
        for (const auto& in : batch) bags.push_back(&in.driving);
        f.mi = mi_.encode(g, bags, lens);
        f.mu = f.mi->mu;
        f.logvar = f.mi->logvar;
        f.has_latent = true;
        break;
      }
      case Family::masked: {
        const Index total = static_cast<Index>(phones.size());
        diff::Matrix<Real> m(total, kMaskedInputWidth);
        Index offset = 0;
        for (const auto& in : batch) {
          m.middleRows(offset, in.length()) = build_masked_input(in.driving, in.length()).template cast<Real>();
          offset += in.length();
        }
        auto out = masked_(g, g.constant(std::move(m)), f.lengths);
        f.mu = out.mu;
        f.logvar = out.logvar;
        f.has_latent = true;
        break;
      }
      case Family::nocontrol:
        z = g.constant(diff::Matrix<Real>::Zero(static_cast<Index>(batch.size()), cfg_.latent_dim()));
        break;
    }
    if (f.has_latent) {
      if (mode == LatentMode::sample) {
        if (noise == nullptr) throw InvalidInput("sampling mode needs a noise generator");
        z = sample_latent(g, f.mu, f.logvar, *noise);
      } else {
        z = f.mu;
      }
    }
    f.pred = decoder_(g, z, content, f.lengths);
    return f;
  }

  // Deterministic inference (posterior mean unless a noise generator is given).
  std::vector<Prediction> predict(const std::vector<ModelInput>& batch, Rng* noise = nullptr) const {
    Graph<Real> g(diff::Mode::eval, false);
    auto f = forward(g, batch, noise ? LatentMode::sample : LatentMode::mean, noise);
    std::vector<Prediction> out(batch.size());
    Index offset = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Index T = f.lengths[i];
      out[i].paf = f.pred.value().middleRows(offset, T).template cast<double>();
      offset += T;
      if (f.has_latent) {
        const auto r = static_cast<Index>(i);
        for (Index d = 0; d < f.mu.cols(); ++d) {
          out[i].mu.push_back(static_cast<double>(f.mu.value()(r, d)));
          out[i].logvar.push_back(static_cast<double>(f.logvar.value()(r, d)));
        }
      }
      if (f.mi) out[i].attention = MiEncoder<Real>::request_order_weights(*f.mi, i);
    }
    return out;
  }

  Prediction predict(const ModelInput& in, Rng* noise = nullptr) const {
    return std::move(predict(std::vector<ModelInput>{in}, noise).front());
  }

 private:
  Family family_;
  ModelConfig cfg_;
  ParamStore<Real> store_;
  ContentEncoder<Real> content_;
  PafDecoder<Real> decoder_;
  MiEncoder<Real> mi_;
  MaskedEncoder<Real> masked_;
};

}  // namespace sparsectl::model
