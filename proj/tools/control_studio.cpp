// control-studio: corpus generation, training, evaluation and serving.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sparsectl/corpus/generate.hpp"
#include "sparsectl/corpus/io.hpp"
#include "sparsectl/corpus/normalize.hpp"
#include "sparsectl/corpus/transplant.hpp"
#include "sparsectl/eval/export.hpp"
#include "sparsectl/eval/refinement.hpp"
#include "sparsectl/eval/sweep.hpp"
#include "sparsectl/service/http.hpp"
#include "sparsectl/train/checkpoint.hpp"
#include "sparsectl/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace sparsectl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log_line(const std::string& s) { std::cerr << s << std::endl; }

// "masked-N" = masked family trained with N% of slots driven.
struct FamilySpec {
  model::Family family;
  std::optional<double> mask_percent;
};

FamilySpec parse_family_spec(const std::string& s) {
  if (s.rfind("masked-", 0) == 0) {
    const auto tail = s.substr(7);
    std::size_t used = 0;
    double driven = -1;
    try {
      driven = std::stod(tail, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tail.size() || driven < 0 || driven > 100) throw UsageError("bad masked variant '" + s + "'");
    return {model::Family::masked, 100.0 - driven};
  }
  return {model::parse_family(s), std::nullopt};
}

struct CorpusBundle {
  corpus::Corpus raw;
  corpus::SpeakerStats stats;
  corpus::Corpus normalized;
};

CorpusBundle load_bundle(const fs::path& dir) {
  CorpusBundle b;
  b.raw = corpus::load_corpus(dir);
  b.stats = corpus::load_stats(dir);
  b.normalized = corpus::normalized(b.raw, b.stats);
  return b;
}

// One named controller per --models entry; "crude" wraps the nocontrol checkpoint.
struct ControllerSet {
  std::vector<std::unique_ptr<model::ProsodyModel<float>>> models;
  std::vector<std::unique_ptr<eval::Controller>> controllers;

  std::vector<const eval::Controller*> pointers() const {
    std::vector<const eval::Controller*> out;
    for (const auto& c : controllers) out.push_back(c.get());
    return out;
  }
};

ControllerSet load_controllers(const std::vector<std::string>& names, const fs::path& dir) {
  ControllerSet set;
  for (const auto& name : names) {
    const bool crude = name == "crude";
    const auto path = dir / ((crude ? std::string("nocontrol") : name) + ".ckpt");
    auto loaded = train::load_checkpoint<float>(path);
    set.models.push_back(std::make_unique<model::ProsodyModel<float>>(std::move(loaded.model)));
    const auto& m = *set.models.back();
    if (crude) {
      set.controllers.push_back(std::make_unique<eval::CrudeController>(name, m));
    } else {
      set.controllers.push_back(std::make_unique<eval::ModelController>(name, m));
    }
  }
  return set;
}

std::vector<corpus::TransplantPair> take_pairs(const corpus::Corpus& c, std::uint64_t seed, std::size_t n) {
  auto plan = corpus::transplant_pairs(c, seed);
  for (const auto& w : plan.warnings) log_line("warning: " + w);
  if (plan.pairs.empty()) throw InvalidInput("corpus has no transplant pairs");
  if (n > 0 && n < plan.pairs.size()) plan.pairs.resize(n);
  return plan.pairs;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    util::atomic_write(path, text);
    log_line("wrote " + path);
  }
}

std::vector<int> parse_grid(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError("bad K grid entry '" + item + "'");
    }
  }
  return out;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const InvalidInput*>(&e)) return "invalid_input";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const FingerprintMismatch*>(&e)) return "fingerprint_mismatch";
  return "runtime";
}

httplib::Server* g_server = nullptr;
void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse prosody control: corpus, training, evaluation and serving"};
  app.set_config("--config", "", "TOML config file; command-line flags override it");
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic multi-speaker corpus");
  std::uint64_t gen_seed = 7;
  std::string gen_profile = "desk", gen_out = "data/corpus";
  int gen_speakers = 0;
  gen->add_option("--seed", gen_seed, "Corpus seed")->capture_default_str();
  gen->add_option("--profile", gen_profile, "desk|paper")->capture_default_str()->check(CLI::IsMember({"desk", "paper"}));
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--speakers", gen_speakers, "Override the profile's speaker count (0 = keep)");

  // train
  auto* tr = app.add_subcommand("train", "Train one model family");
  std::string tr_family = "micvae", tr_corpus = "data/corpus", tr_out, tr_scale = "desk", tr_policy;
  train::TrainSchedule sched;
  std::string tr_policy_default(train::policy_name(sched.policy));
  tr_policy = tr_policy_default;
  tr->add_option("--family", tr_family, "micvae|masked|nocontrol|masked-N (N% driven)")->capture_default_str();
  tr->add_option("--corpus", tr_corpus, "Corpus directory")->capture_default_str();
  tr->add_option("--out", tr_out, "Checkpoint path (default checkpoints/<family>.ckpt)");
  tr->add_option("--scale", tr_scale, "desk|paper model widths")->capture_default_str()->check(CLI::IsMember({"desk", "paper"}));
  tr->add_option("--epochs", sched.epochs)->capture_default_str();
  tr->add_option("--batch-size", sched.batch_size)->capture_default_str();
  tr->add_option("--lr", sched.lr)->capture_default_str();
  tr->add_option("--beta", sched.beta, "KL weight after warm-up")->capture_default_str();
  tr->add_option("--warmup", sched.warmup_fraction, "Fraction of steps for the KL warm-up")->capture_default_str();
  tr->add_option("--clip", sched.clip_norm)->capture_default_str();
  tr->add_option("--policy", tr_policy, "micvae bag policy: full|random-subset|random-k")->capture_default_str();
  tr->add_option("--subset-keep", sched.subset_keep)->capture_default_str();
  tr->add_option("--empty-bag-rate", sched.empty_bag_rate)->capture_default_str();
  tr->add_option("--mask-percent", sched.mask_percent, "masked: percent of slots hidden (P)")->capture_default_str();
  tr->add_option("--seed", sched.seed, "Initialisation and batching seed")->capture_default_str();

  // evaluation shared options
  struct EvalOpts {
    std::string corpus = "data/corpus";
    std::string checkpoints = "checkpoints";
    std::vector<std::string> models;
    std::uint64_t seed = 1;
    std::size_t pairs = 0;
    std::string out;
  };
  auto add_eval = [](CLI::App* sub, EvalOpts& o, std::vector<std::string> default_models) {
    o.models = std::move(default_models);
    sub->add_option("--corpus", o.corpus, "Corpus directory")->capture_default_str();
    sub->add_option("--checkpoints", o.checkpoints, "Directory holding <model>.ckpt files")->capture_default_str();
    sub->add_option("--models", o.models, "Model names; 'crude' wraps nocontrol.ckpt")->delimiter(',')->capture_default_str();
    sub->add_option("--seed", o.seed, "Pair shuffling and slot sampling seed")->capture_default_str();
    sub->add_option("--pairs", o.pairs, "Number of transplant pairs (0 = all)")->capture_default_str();
  };

  auto* refine = app.add_subcommand("eval-refine", "Iterative refinement curves");
  EvalOpts ro;
  int max_steps = -1;
  add_eval(refine, ro, {"micvae", "crude"});
  refine->add_option("--max-steps", max_steps, "Steps per trace (default min(70, smallest 3T))");
  refine->add_option("--out", ro.out, "Plot-data TSV (default stdout table only)");

  auto* sweep = app.add_subcommand("eval-sweep", "Robustness sweep over random driving sets");
  EvalOpts so;
  std::string grid = "0,6,12,36,72,256";
  std::size_t trials = 200, resamples = 1000;
  add_eval(sweep, so, {"micvae", "masked-0", "masked-50", "masked-100"});
  sweep->add_option("--grid", grid, "Comma-separated K grid")->capture_default_str();
  sweep->add_option("--trials", trials, "Trials per K")->capture_default_str();
  sweep->add_option("--bootstrap", resamples, "Bootstrap resamples")->capture_default_str();
  sweep->add_option("--out", so.out, "Plot-data TSV");

  auto* stim = app.add_subcommand("export-stimuli", "Write K=a vs K=b prediction files and a manifest");
  EvalOpts xo;
  std::size_t k_a = 4, k_b = 0;
  add_eval(stim, xo, {"micvae"});
  stim->add_option("--k-a", k_a)->capture_default_str();
  stim->add_option("--k-b", k_b)->capture_default_str();
  stim->add_option("--out", xo.out, "Output directory")->required();

  auto* plot = app.add_subcommand("plot-data", "Per-sentence contour table (truth, prediction, driven slots)");
  EvalOpts po;
  std::size_t plot_k = 4;
  add_eval(plot, po, {"micvae", "crude"});
  po.pairs = 4;
  plot->add_option("--k", plot_k, "Random driven slots per sentence")->capture_default_str();
  plot->add_option("--out", po.out, "Contour TSV (default stdout)");

  auto* serve = app.add_subcommand("serve", "HTTP prediction service");
  std::string sv_ckpt = "checkpoints/micvae.ckpt", sv_corpus = "data/corpus", sv_host = "127.0.0.1";
  int sv_port = 0;
  serve->add_option("--checkpoint", sv_ckpt)->capture_default_str();
  serve->add_option("--corpus", sv_corpus)->capture_default_str();
  serve->add_option("--host", sv_host)->capture_default_str();
  serve->add_option("--port", sv_port, "Port (fallback: CONTROL_STUDIO_PORT, then 8080)");

  auto* inspect = app.add_subcommand("inspect-checkpoint", "Describe a checkpoint");
  std::string in_path;
  inspect->add_option("path", in_path, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    std::cerr << app.help();
    return 2;
  }

  auto* cmd = app.get_subcommands().front();
  log_line("# resolved config [" + cmd->get_name() + "]\n" + cmd->config_to_str(true, false));

  try {
    if (cmd == gen) {
      auto prof = corpus::CorpusProfile::named(gen_profile);
      if (gen_speakers > 0) prof.speakers = gen_speakers;
      prof.renditions_per_test = std::min(prof.renditions_per_test, prof.speakers);
      prof.train_renditions = std::min(prof.train_renditions, prof.speakers);
      const auto c = corpus::generate_corpus(gen_seed, prof);
      corpus::save_corpus(gen_out, c, corpus::compute_stats(c));
      std::cout << "corpus " << gen_out << ": " << c.sentences.size() << " sentences, " << c.renditions.size()
                << " renditions, " << c.split.test.size() << " test sentences\n";
      return 0;
    }

    if (cmd == tr) {
      const auto spec = parse_family_spec(tr_family);
      sched.policy = train::parse_policy(tr_policy);
      if (spec.mask_percent) sched.mask_percent = *spec.mask_percent;
      const auto b = load_bundle(tr_corpus);
      const auto& p = b.raw.profile;
      auto cfg = tr_scale == "paper" ? model::ModelConfig::paper(p.vocab_size, p.speakers, p.styles)
                                     : model::ModelConfig::desk(p.vocab_size, p.speakers, p.styles);
      model::ProsodyModel<float> m(spec.family, cfg, sched.seed);
      const auto data = train::training_examples(b.normalized);
      log_line("training " + tr_family + " on " + std::to_string(data.size()) + " examples, " +
               std::to_string(m.params().count()) + " parameters");
      double epoch_loss = 0.0;
      std::size_t epoch_steps = 0, last_epoch = 0;
      const auto r = train::train(m, data, sched, [&](std::size_t, std::size_t epoch, const train::ElboTerms& t) {
        if (epoch != last_epoch && epoch_steps > 0) {
          log_line("epoch " + std::to_string(last_epoch) + " loss " + std::to_string(epoch_loss / epoch_steps));
          epoch_loss = 0.0;
          epoch_steps = 0;
        }
        last_epoch = epoch;
        epoch_loss += t.total;
        ++epoch_steps;
      });
      if (epoch_steps > 0) log_line("epoch " + std::to_string(last_epoch) + " loss " + std::to_string(epoch_loss / epoch_steps));
      if (r.diverged) log_line("warning: " + r.message);
      const auto out = tr_out.empty() ? "checkpoints/" + tr_family + ".ckpt" : tr_out;
      train::save_checkpoint(out, m, train::training_metadata(sched, r, fs::absolute(tr_corpus).string()));
      std::cout << "checkpoint " << out << " family " << model::family_name(m.family()) << " fingerprint "
                << m.fingerprint() << " steps " << r.steps << " loss " << (r.loss.empty() ? 0.0 : r.initial_smoothed())
                << " -> " << (r.loss.empty() ? 0.0 : r.final_smoothed()) << " (" << r.seconds << " s)\n";
      return r.diverged ? 1 : 0;
    }

    if (cmd == refine) {
      const auto b = load_bundle(ro.corpus);
      eval::EvalData data(b.normalized);
      const auto pairs = take_pairs(b.normalized, ro.seed, ro.pairs);
      int steps = max_steps;
      if (steps < 0) {
        steps = 70;
        for (const auto& p : pairs) steps = std::min(steps, 3 * static_cast<int>(data.driving_rendition(p).rows()));
      }
      const auto set = load_controllers(ro.models, ro.checkpoints);
      std::vector<eval::RefinementTrace> all;
      std::vector<std::vector<double>> curves;
      for (const auto* c : set.pointers()) {
        auto t = eval::iterative_refinement(*c, data, pairs, steps);
        curves.push_back(eval::mean_curve(t));
        all.insert(all.end(), t.begin(), t.end());
      }
      std::cout << "step";
      for (const auto& n : ro.models) std::cout << '\t' << n;
      std::cout << '\n' << std::setprecision(6);
      for (int k = 0; k <= steps; ++k) {
        std::cout << k;
        for (const auto& c : curves) std::cout << '\t' << c[static_cast<std::size_t>(k)];
        std::cout << '\n';
      }
      if (!ro.out.empty()) {
        std::ostringstream os;
        eval::write_plot_data(os, eval::plot_rows(all, 1000, ro.seed));
        write_text(ro.out, os.str());
      }
      return 0;
    }

    if (cmd == sweep) {
      const auto b = load_bundle(so.corpus);
      eval::EvalData data(b.normalized);
      const auto pairs = take_pairs(b.normalized, so.seed, so.pairs);
      const auto set = load_controllers(so.models, so.checkpoints);
      eval::SweepOptions opt;
      opt.k_grid = parse_grid(grid);
      opt.trials_per_k = trials;
      opt.seed = so.seed;
      opt.bootstrap_resamples = resamples;
      const auto rep = eval::robustness_sweep(set.pointers(), data, pairs, opt);
      std::cout << "model\tK\tmean_rmse\tci_low\tci_high\ttrials\tclamped\n" << std::setprecision(6);
      for (const auto& c : rep.curves) {
        for (const auto& p : c.points) {
          std::cout << c.model << '\t' << p.k << '\t' << p.mean << '\t' << p.ci.low << '\t' << p.ci.high << '\t'
                    << p.samples << '\t' << p.clamped << '\n';
        }
      }
      if (!so.out.empty()) {
        std::ostringstream os;
        eval::write_plot_data(os, eval::plot_rows(rep));
        write_text(so.out, os.str());
      }
      return 0;
    }

    if (cmd == stim) {
      if (xo.models.size() != 1) throw UsageError("export-stimuli takes exactly one model");
      const auto b = load_bundle(xo.corpus);
      eval::EvalData data(b.normalized);
      const auto pairs = take_pairs(b.normalized, xo.seed, xo.pairs);
      const auto set = load_controllers(xo.models, xo.checkpoints);
      const auto rows = eval::export_stimuli(*set.controllers.front(), data, pairs, xo.out, {k_a, k_b, xo.seed});
      std::cout << "stimuli " << rows.size() << " pairs -> " << (fs::path(xo.out) / "manifest.jsonl").string() << "\n";
      return 0;
    }

    if (cmd == plot) {
      const auto b = load_bundle(po.corpus);
      eval::EvalData data(b.normalized);
      const auto pairs = take_pairs(b.normalized, po.seed, po.pairs);
      const auto set = load_controllers(po.models, po.checkpoints);
      std::ostringstream os;
      eval::write_contour_header(os);
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& truth = data.driving_rendition(pairs[i]);
        Rng rng(po.seed * 7919ULL + i);
        const auto slots = eval::random_slots(static_cast<int>(truth.rows()),
                                              std::min<std::size_t>(plot_k, 3 * static_cast<std::size_t>(truth.rows())), rng);
        for (const auto* c : set.pointers()) {
          eval::write_contour(os, {c->name(), pairs[i], truth, eval::simulate_control(*c, data, pairs[i], slots), slots});
        }
      }
      write_text(po.out, os.str());
      return 0;
    }

    if (cmd == serve) {
      int port = sv_port;
      if (port == 0) {
        const char* env = std::getenv("CONTROL_STUDIO_PORT");
        port = env ? std::atoi(env) : 8080;
      }
      if (port <= 0 || port > 65535) throw UsageError("invalid port " + std::to_string(port));
      auto loaded = train::load_checkpoint<float>(sv_ckpt);
      const auto b = load_bundle(sv_corpus);
      const service::PredictionService svc(std::move(loaded.model), b.raw, b.stats);
      httplib::Server srv;
      service::bind_routes(srv, svc);
      g_server = &srv;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      if (!srv.bind_to_port(sv_host, port)) throw std::runtime_error("cannot bind " + sv_host + ":" + std::to_string(port));
      log_line("serving " + svc.model().fingerprint() + " on http://" + sv_host + ":" + std::to_string(port));
      srv.listen_after_bind();
      return 0;
    }

    if (cmd == inspect) {
      const auto bytes = util::read_file(in_path);
      const auto h = train::parse_checkpoint_header(bytes);
      // full load validates every blob
      const auto loaded = train::load_checkpoint<float>(in_path);
      const auto& m = loaded.model;
      const auto& e = m.config().encoder;
      std::cout << "family\t" << model::family_name(m.family()) << "\nfingerprint\t" << m.fingerprint() << "\nscale\t"
                << m.config().scale << "\n";
      for (std::size_t i = 0; i < m.params().size(); ++i) {
        const auto& p = m.params()[i];
        std::cout << "blob\t" << p.name << '\t' << p.value.rows() << 'x' << p.value.cols() << '\t' << p.value.size()
                  << "\n";
      }
      std::cout << "total_parameters\t" << m.params().count() << "\n";
      std::cout << "mi_encoder\tH=" << e.hidden << " D=" << e.value_dim << " L=" << e.gate_dim << " F=" << e.feature_dim
                << " P=" << e.position_dim << " latent=" << e.latent_dim
                << " score=" << (e.per_dimension ? "per-dimension" : "scalar") << "\n";
      if (m.family() != model::Family::nocontrol) {
        const model::ProsodyModel<float> mi(model::Family::micvae, m.config(), 0);
        const model::ProsodyModel<float> masked(model::Family::masked, m.config(), 0);
        std::cout << "encoder_parameters\tmicvae=" << mi.encoder_param_count() << " masked=" << masked.encoder_param_count()
                  << " (width " << masked.config().masked_width << ")\n";
        std::cout << "parity_ratio\t" << std::setprecision(6)
                  << static_cast<double>(mi.encoder_param_count()) / static_cast<double>(masked.encoder_param_count())
                  << "\n";
      }
      if (h.metadata.contains("schedule")) std::cout << "schedule\t" << h.metadata["schedule"].dump() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    nlohmann::ordered_json err{{"error", error_kind(e)}, {"command", cmd->get_name()}, {"message", e.what()}};
    if (const auto* fe = dynamic_cast<const FormatError*>(&e); fe && fe->record() != FormatError::npos) {
      err["record"] = fe->record();
    }
    std::cerr << err.dump() << "\n";
    return dynamic_cast<const UsageError*>(&e) ? 2 : 1;
  }
  return 0;
}
