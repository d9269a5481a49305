#include "jsa/cli/runner.hpp"

#include "jsa/cli/checkpoint.hpp"
#include "jsa/cli/idx.hpp"
#include "jsa/experiments.hpp"
#include "jsa/jsa_trainer.hpp"
#include "jsa/vae_baseline.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

#ifndef JSA_VERSION
#define JSA_VERSION "unknown"
#endif
#ifndef JSA_DEFAULT_DIGITS_DIR
#define JSA_DEFAULT_DIGITS_DIR ""
#endif

namespace jsa::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint64_t kModelSeedMix = 0x6a09e667f3bcc909ULL;
constexpr std::uint64_t kMetricSeedMix = 0xc2b2ae3d27d4eb4fULL;
constexpr std::uint64_t kExportSeedMix = 0x510e527fade682d1ULL;

// Denormal arithmetic slows late training by ~3x; runs flush them to zero.
class FlushDenormals {
 public:
#if defined(__SSE2__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

/// Scalar root finding λ* = target from noisy observations target + ε − λ.
class ToySaTrainer : public IterativeTrainer {
 public:
  ToySaTrainer(SAConfig sa, double target, double noise_std, std::uint64_t seed)
      : sa_(sa), target_(target), noise_std_(noise_std), rng_(seed) {
    sa_.validate();
    store_.add("lambda", Tensor::scalar(0.0));
  }
  void step(std::uint64_t t) override {
    store_.zero_grad();
    std::normal_distribution<double> eps(0.0, 1.0);
    Parameter& p = store_.at("lambda");
    p.grad[0] = target_ + noise_std_ * eps(rng_) - p.value[0];
    sa_step(store_, sa_, t);
  }
  void fill_metrics(MetricsRow& row, std::uint64_t t) override {
    const double lambda = store_.at("lambda").value[0];
    row.set("gamma", lr_schedule(sa_, std::max<std::uint64_t>(t, 1)));
    row.set("lambda", lambda);
    row.set("abs_error", std::abs(lambda - target_));
  }
  ParamStore& store() { return store_; }
  Rng& rng() { return rng_; }

 private:
  SAConfig sa_;
  double target_;
  double noise_std_;
  Rng rng_;
  ParamStore store_;
};

GMMDatasetSpec gmm_spec(const RunConfig& c) {
  GMMDatasetSpec s;
  s.n = c.get_uint("data.n");
  const double h = c.get_real("data.grid_spacing");
  s.grid = {-1.5 * h, -0.5 * h, 0.5 * h, 1.5 * h};
  s.std_dev = c.get_real("data.std");
  s.seed = c.seed();
  return s;
}

CFGCorpusSpec cfg_spec(const RunConfig& c) {
  CFGCorpusSpec s;
  s.size = c.get_uint("data.n");
  s.max_length = c.get_uint("data.max_length");
  s.p_terminal = c.get_real("data.p_terminal");
  s.seed = c.seed();
  return s;
}

std::string provenance(const RunConfig& c, const std::string& what) {
  return what + "; experiment=" + c.experiment() + " seed=" + std::to_string(c.seed()) + " jsa " + JSA_VERSION;
}

/// Data, models and trainer of one run, rebuilt deterministically from the
/// configuration.
class Session {
 public:
  explicit Session(const RunConfig& config) : cfg_(config) {
    load_data();
    if (cfg_.experiment() == "toy-sa") {
      toy_ = std::make_unique<ToySaTrainer>(cfg_.sa(), cfg_.get_real("data.target"), cfg_.get_real("data.noise_std"),
                                            cfg_.seed());
      return;
    }
    build_models();
  }

  const std::string& experiment() const { return cfg_.experiment(); }
  bool is_vae() const { return cfg_.get_text("trainer") == "vae"; }

  IterativeTrainer& trainer() {
    if (toy_) return *toy_;
    if (!jsa_ && !vae_) make_trainer();
    return jsa_ ? static_cast<IterativeTrainer&>(*jsa_) : *vae_;
  }

  CheckpointRefs refs() {
    trainer();
    CheckpointRefs r;
    r.identity = {{"experiment", cfg_.experiment()},
                  {"trainer", cfg_.get_text("trainer")},
                  {"seed", std::to_string(cfg_.seed())}};
    if (toy_) {
      r.extra = &toy_->store();
      r.rng = &toy_->rng();
      return r;
    }
    r.gen = gen_.get();
    r.inf = inf_.get();
    if (jsa_) {
      r.rng = &jsa_->rng();
      r.chain_spec = gen_->latent_spec();
      r.unlabeled_chains = &jsa_->unlabeled_chains();
      if (semi_) r.labeled_chains = &jsa_->labeled_chains();
    } else {
      r.rng = &vae_->rng();
      r.eval_rng = &vae_->eval_rng();
    }
    return r;
  }

  /// Experiment-specific columns, computed with a per-iteration rng so the
  /// values do not depend on how the run was split.
  void add_metrics(MetricsRow& row) {
    if (toy_) return;
    Rng rng(cfg_.seed() ^ (kMetricSeedMix * (row.iteration + 1)));
    const std::string& e = experiment();
    if (e == "fa") {
      if (auto* lin = dynamic_cast<LinearGaussianDecoder*>(gen_.get())) {
        const FAOracleMetrics m = kl_oracles_fa(fa_oracle_, lin->to_fa(), *inf_, train_x_);
        row.set("kl_marginal", m.kl_marginal);
        row.set("kl_posterior", m.kl_posterior);
      }
    } else if (e == "gmm") {
      const ModeRecovery m = mode_recovery(generate(*gen_, cfg_.get_uint("eval.samples"), rng), gmm_spec(cfg_));
      row.set("modes_hit", static_cast<double>(m.modes_hit));
      row.set("spurious_mass", m.spurious_mass);
    } else if (e == "cfg") {
      const auto strings = decode_sequences(generate(*gen_, cfg_.get_uint("eval.samples"), rng));
      row.set("valid_fraction", cfg_validity(strings).valid_fraction());
    } else if (e == "semi-digits") {
      row.set("test_error", classification_error(*inf_, test_x_, test_labels_));
    }
  }

  void write_data(const fs::path& out) const {
    const std::string& e = experiment();
    if (e == "fa") {
      write_points_csv(out / "data.csv", provenance(cfg_, "factor-analysis sample"), train_x_);
    } else if (e == "gmm") {
      write_points_csv(out / "data.csv", provenance(cfg_, "4x4 grid Gaussian mixture"), train_x_, &gmm_labels_);
    } else if (e == "cfg") {
      write_lines(out / "corpus.txt", provenance(cfg_, "arithmetic-expression corpus"), corpus_);
    } else if (e == "semi-digits") {
      std::vector<std::string> lines{"set,index,label"};
      for (std::size_t i = 0; i < labeled_idx_.size(); ++i) {
        lines.push_back("labeled," + std::to_string(labeled_idx_[i]) + "," + std::to_string(labels_[i]));
      }
      for (std::size_t i : unlabeled_idx_) lines.push_back("unlabeled," + std::to_string(i) + ",");
      for (std::size_t i = 0; i < test_labels_.size(); ++i) {
        lines.push_back("test," + std::to_string(i) + "," + std::to_string(test_labels_[i]));
      }
      write_lines(out / "split.csv", provenance(cfg_, "digit split from " + digits_dir_.string()), lines);
    }
  }

  /// Writes generated samples and returns the path.
  fs::path write_samples(const fs::path& out, std::size_t count) {
    if (toy_) throw ConfigError("experiment: toy-sa has no generative model to sample");
    Rng rng(cfg_.seed() ^ kExportSeedMix);
    if (experiment() == "cfg") {
      const fs::path p = out / "samples.txt";
      write_lines(p, provenance(cfg_, "generated sequences"), decode_sequences(generate(*gen_, count, rng)));
      return p;
    }
    std::vector<std::size_t> labels;
    const Tensor x = generate_with_labels(count, rng, labels);
    const fs::path p = out / "samples.csv";
    write_points_csv(p, provenance(cfg_, "generated samples"), x, labels.empty() ? nullptr : &labels);
    return p;
  }

 private:
  Tensor generate_with_labels(std::size_t count, Rng& rng, std::vector<std::size_t>& labels) {
    if (!gen_->latent_spec().has_classes()) return generate(*gen_, count, rng);
    LatentBatch z = LatentBatch::empty(gen_->latent_spec(), count);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> cls(0, gen_->latent_spec().num_classes() - 1);
    double prior = 0.5;
    for (const auto& f : gen_->latent_spec().factors()) {
      if (f.kind == FactorKind::bernoulli) prior = f.prior_mean;
    }
    std::bernoulli_distribution bit(prior);
    for (double& b : z.bits.data()) b = bit(rng) ? 1.0 : 0.0;
    for (double& r : z.reals.data()) r = normal(rng);
    for (auto& y : z.labels) y = cls(rng);
    labels = z.labels;
    return gen_->sample_observations(z, rng);
  }

  void load_data() {
    const std::string& e = experiment();
    if (e == "fa") {
      FADatasetSpec s;
      s.n = cfg_.get_uint("data.n");
      s.seed = cfg_.seed();
      FADataset d = gen_fa_data(s);
      train_x_ = std::move(d.x);
      fa_oracle_ = d.oracle;
    } else if (e == "gmm") {
      GMMDataset d = gen_gmm_data(gmm_spec(cfg_));
      train_x_ = std::move(d.x);
      gmm_labels_ = std::move(d.labels);
    } else if (e == "cfg") {
      corpus_ = gen_cfg_corpus(cfg_spec(cfg_));
      train_x_ = encode_sequences(corpus_, cfg_.get_uint("data.max_length"));
    } else if (e == "semi-digits") {
      load_digits_split();
    }
  }

  void load_digits_split() {
    digits_dir_ = cfg_.get_text("data.dir").empty() ? default_digits_dir() : fs::path(cfg_.get_text("data.dir"));
    const Binarize mode = parse_binarize(cfg_.get_text("data.binarize"));
    Rng rng(cfg_.seed());
    const DigitSet train = load_digits(digits_dir_ / "train-images-idx3-ubyte", digits_dir_ / "train-labels-idx1-ubyte",
                                       mode, rng);
    const DigitSet test = load_digits(digits_dir_ / "t10k-images-idx3-ubyte", digits_dir_ / "t10k-labels-idx1-ubyte",
                                      mode, rng);
    const std::size_t classes = cfg_.get_uint("model.classes");
    const std::size_t n_lab = cfg_.get_uint("data.labeled"), n_unl = cfg_.get_uint("data.unlabeled");
    const std::size_t n_test = cfg_.get_uint("data.test");
    for (std::size_t y : train.labels) {
      if (y >= classes) throw IoError("digit label " + std::to_string(y) + " outside model.classes");
    }

    // Class-balanced labeled set taken in file order, then the next images as
    // the unlabeled set.
    const std::size_t per_class = (n_lab + classes - 1) / classes;
    std::vector<std::size_t> taken(classes, 0);
    std::vector<char> used(train.labels.size(), 0);
    for (std::size_t i = 0; i < train.labels.size() && labeled_idx_.size() < n_lab; ++i) {
      if (taken[train.labels[i]] < per_class) {
        ++taken[train.labels[i]];
        used[i] = 1;
        labeled_idx_.push_back(i);
      }
    }
    for (std::size_t i = 0; i < train.labels.size() && unlabeled_idx_.size() < n_unl; ++i) {
      if (!used[i]) unlabeled_idx_.push_back(i);
    }
    if (labeled_idx_.size() < n_lab || unlabeled_idx_.size() < n_unl) {
      throw IoError(digits_dir_.string() + ": not enough training images for the requested split");
    }
    if (test.labels.size() < n_test) throw IoError(digits_dir_.string() + ": not enough test images");

    labeled_x_ = take_rows(train.images, labeled_idx_);
    for (std::size_t i : labeled_idx_) labels_.push_back(train.labels[i]);
    train_x_ = n_unl == 0 ? Tensor::zeros({0, train.images.cols()}) : take_rows(train.images, unlabeled_idx_);
    std::vector<std::size_t> test_idx(n_test);
    for (std::size_t i = 0; i < n_test; ++i) test_idx[i] = i;
    test_x_ = take_rows(test.images, test_idx);
    test_labels_.assign(test.labels.begin(), test.labels.begin() + static_cast<std::ptrdiff_t>(n_test));
    semi_ = true;
  }

  void build_models() {
    Rng rng(cfg_.seed() ^ kModelSeedMix);
    LatentSpec latent = LatentSpec::parse(cfg_.get_text("model.latent"));
    if (cfg_.get_uint("model.classes") > 0) latent = latent.with_classes(cfg_.get_uint("model.classes"));
    const std::string decoder = cfg_.get_text("model.decoder");
    const auto dec_h = cfg_.widths("model.decoder_hidden");
    const auto enc_h = cfg_.widths("model.encoder_hidden");
    const std::size_t obs = experiment() == "semi-digits" ? labeled_x_.cols() : train_x_.cols();
    if (decoder == "lstm") {
      const SequenceShape shape{cfg_.get_uint("data.max_length"), kCfgVocab};
      gen_ = std::make_unique<SeqDecoder>(latent, shape, dec_h[0], dec_h[1], rng);
      inf_ = std::make_unique<SeqEncoder>(latent, shape, enc_h[0], enc_h[1], rng);
      return;
    }
    if (decoder == "linear_gaussian") {
      gen_ = std::make_unique<LinearGaussianDecoder>(latent, obs, cfg_.get_real("model.noise_var"), rng);
    } else {
      const ObservationModel om =
          decoder == "mlp_bernoulli" ? ObservationModel::bernoulli_pixel : ObservationModel::diag_gaussian;
      gen_ = std::make_unique<MlpDecoder>(latent, obs, dec_h, om, rng);
    }
    inf_ = std::make_unique<MlpEncoder>(latent, obs, enc_h, rng);
  }

  void make_trainer() {
    try {
      if (is_vae()) {
        vae_ = std::make_unique<VaeTrainer>(*gen_, *inf_, train_x_, cfg_.vae(), cfg_.seed());
      } else if (semi_) {
        jsa_ = std::make_unique<JsaTrainer>(*gen_, *inf_, train_x_, labeled_x_, labels_, cfg_.jsa(), cfg_.seed());
      } else {
        jsa_ = std::make_unique<JsaTrainer>(*gen_, *inf_, train_x_, cfg_.jsa(), cfg_.seed());
      }
    } catch (const UnsupportedFactorError& e) {
      throw ConfigError(std::string("trainer: ") + e.what());
    }
  }

  RunConfig cfg_;
  Tensor train_x_;
  FAModel fa_oracle_ = FAModel::reference();
  std::vector<std::size_t> gmm_labels_;
  std::vector<std::string> corpus_;
  fs::path digits_dir_;
  Tensor labeled_x_, test_x_;
  std::vector<std::size_t> labels_, test_labels_, labeled_idx_, unlabeled_idx_;
  bool semi_ = false;

  std::unique_ptr<GenerativeModel> gen_;
  std::unique_ptr<InferenceModel> inf_;
  std::unique_ptr<JsaTrainer> jsa_;
  std::unique_ptr<VaeTrainer> vae_;
  std::unique_ptr<ToySaTrainer> toy_;
};

class CsvSink {
 public:
  CsvSink(const fs::path& path, std::uint64_t keep_through, bool resume, bool wallclock)
      : path_(path), wallclock_(wallclock), start_(std::chrono::steady_clock::now()) {
    std::string kept;
    if (resume) {
      std::ifstream in(path);
      if (!in) throw IoError("cannot reopen " + path.string() + " for resume");
      std::string line;
      while (std::getline(in, line)) {
        if (kept.empty()) {
          kept = line + "\n";
          header_written_ = true;
          continue;
        }
        if (std::stoull(line.substr(0, line.find(','))) <= keep_through) kept += line + "\n";
      }
    }
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << kept;
  }

  void operator()(const MetricsRow& row) {
    if (!header_written_) {
      out_ << "iteration";
      for (const auto& [k, v] : row.values) out_ << ',' << k;
      if (wallclock_) out_ << ",wallclock_s";
      out_ << '\n';
      header_written_ = true;
    }
    out_ << row.iteration;
    for (const auto& [k, v] : row.values) out_ << ',' << format_number(v);
    if (wallclock_) {
      out_ << ',' << format_number(std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
    }
    out_ << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
  bool header_written_ = false;
  bool wallclock_;
  std::chrono::steady_clock::time_point start_;
};

std::optional<fs::path> latest_checkpoint(const fs::path& out) {
  const fs::path dir = out / "checkpoints";
  if (!fs::exists(dir)) return std::nullopt;
  std::optional<fs::path> best;
  std::uint64_t best_it = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path m = entry.path() / "manifest.txt";
    if (!fs::exists(m)) continue;
    const auto manifest = read_manifest(m);
    const auto it = manifest.find("iteration");
    if (it == manifest.end()) continue;
    const std::uint64_t iter = std::stoull(it->second);
    if (!best || iter > best_it) {
      best = entry.path();
      best_it = iter;
    }
  }
  return best;
}

std::string checkpoint_name(std::uint64_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%010llu", static_cast<unsigned long long>(t));
  return buf;
}

json summary_json(const RunConfig& config, const RunSummary& s) {
  json j;
  j["status"] = s.status;
  j["experiment"] = config.experiment();
  j["trainer"] = config.get_text("trainer");
  j["seed"] = config.seed();
  j["iterations"] = s.iterations;
  j["skipped_updates"] = s.skipped_updates;
  j["final"] = json::object();
  for (const auto& [k, v] : s.final_metrics) j["final"][k] = v;
  j["version"] = JSA_VERSION;
  return j;
}

void load_final(Session& session, const fs::path& out) {
  const fs::path dir = out / "checkpoints" / "final";
  if (!fs::exists(dir / "manifest.txt")) throw IoError("no final checkpoint in " + out.string());
  CheckpointRefs refs = session.refs();
  load_checkpoint(dir, refs);
}

}  // namespace

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path default_digits_dir() {
  if (const char* env = std::getenv("JSA_DIGITS_DIR"); env && *env) return env;
  return JSA_DEFAULT_DIGITS_DIR;
}

void gen_data(const RunConfig& config, const fs::path& out) {
  const FlushDenormals ftz;
  ensure_dir(out);
  write_text(out / "config.json", serialize(config));
  Session(config).write_data(out);
}

RunSummary train(const RunConfig& config, const fs::path& out, bool resume) {
  const FlushDenormals ftz;
  ensure_dir(out);
  Session session(config);
  IterativeTrainer& trainer = session.trainer();

  std::uint64_t start = 0;
  if (resume) {
    const auto dir = latest_checkpoint(out);
    if (!dir) throw IoError("nothing to resume: no checkpoint under " + (out / "checkpoints").string());
    const auto saved = out / "config.json";
    if (fs::exists(saved)) {
      std::ifstream in(saved);
      std::stringstream ss;
      ss << in.rdbuf();
      // Only the iteration budget may change on resume.
      RunConfig previous = parse_config(ss.str());
      previous.set("iterations", std::to_string(config.get_uint("iterations")));
      if (!(previous == config)) throw ConfigError("config: differs from the configuration of the run being resumed");
    }
    CheckpointRefs refs = session.refs();
    start = load_checkpoint(*dir, refs);
    write_text(out / "config.json", serialize(config));
  } else {
    write_text(out / "config.json", serialize(config));
    session.write_data(out);
  }

  const std::uint64_t iterations = config.get_uint("iterations");
  const std::uint64_t ckpt_every = config.get_uint("checkpoint_interval");
  CsvSink csv(out / "metrics.csv", start, resume, config.get_bool("wallclock"));
  auto hook = [&](MetricsRow& row) {
    session.add_metrics(row);
    if (ckpt_every > 0 && row.iteration > 0 && row.iteration % ckpt_every == 0 && row.iteration < iterations) {
      CheckpointRefs refs = session.refs();
      refs.iteration = row.iteration;
      save_checkpoint(out / "checkpoints" / checkpoint_name(row.iteration), refs);
    }
  };

  RunSummary summary;
  try {
    const TrainRun run = run_training(trainer, LoopConfig{iterations, config.get_uint("metric_interval"), start},
                                      hook, [&](const MetricsRow& r) { csv(r); });
    summary.iterations = run.last_iteration;
    summary.skipped_updates = run.skipped_updates;
    if (!run.rows.empty()) {
      for (const auto& [k, v] : run.rows.back().values) summary.final_metrics[k] = v;
    }
  } catch (const NumericError& e) {
    summary.status = std::string("numeric_abort: ") + e.what();
    write_text(out / "summary.json", summary_json(config, summary).dump(2) + "\n");
    throw;
  }
  CheckpointRefs refs = session.refs();
  refs.iteration = summary.iterations;
  save_checkpoint(out / "checkpoints" / "final", refs);
  write_text(out / "summary.json", summary_json(config, summary).dump(2) + "\n");
  return summary;
}

RunSummary evaluate(const RunConfig& config, const fs::path& out) {
  const FlushDenormals ftz;
  Session session(config);
  load_final(session, out);
  const auto manifest = read_manifest(out / "checkpoints" / "final" / "manifest.txt");
  MetricsRow row;
  row.iteration = std::stoull(manifest.at("iteration"));
  session.add_metrics(row);
  if (config.experiment() == "toy-sa" || config.get_text("trainer") == "vae") {
    MetricsRow base;
    session.trainer().fill_metrics(base, row.iteration);
    for (const auto& [k, v] : base.values) row.set(k, v);
  }
  RunSummary s;
  s.iterations = row.iteration;
  for (const auto& [k, v] : row.values) s.final_metrics[k] = v;
  write_text(out / "eval.json", summary_json(config, s).dump(2) + "\n");
  return s;
}

fs::path export_samples(const RunConfig& config, const fs::path& out, std::size_t count) {
  const FlushDenormals ftz;
  Session session(config);
  load_final(session, out);
  return session.write_samples(out, count == 0 ? config.get_uint("eval.samples") : count);
}

int guarded(const std::function<void()>& body) {
  auto fail = [&](int code, const std::string& kind, const std::string& what) {
    std::cerr << "jsa: " << kind << ": " << what << "\n";
    return code;
  };
  try {
    body();
    return exit_ok;
  } catch (const ConfigError& e) {
    return fail(exit_config, "config error", e.what());
  } catch (const NumericError& e) {
    return fail(exit_numeric, "numeric abort", e.what());
  } catch (const IoError& e) {
    return fail(exit_io, "I/O error", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(exit_io, "I/O error", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(exit_config, "config error", e.what());
  } catch (const std::exception& e) {
    return fail(exit_internal, "internal error", e.what());
  }
}

}  // namespace jsa::cli
