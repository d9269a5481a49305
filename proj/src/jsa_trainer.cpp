#include "jsa/jsa_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jsa {

void SemiConfig::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0) throw std::invalid_argument("semi.alpha: must be finite and >= 0");
  if (!std::isfinite(entropy_weight) || entropy_weight < 0.0) {
    throw std::invalid_argument("semi.entropy_weight: must be finite and >= 0");
  }
  if (!(classifier_noise >= 0.0)) throw std::invalid_argument("semi.classifier_noise: must be >= 0");
  if (labeled_batch < 1) throw std::invalid_argument("semi.labeled_batch: must be >= 1");
}

GradientMap snapshot_grads(const ParamStore& store) {
  GradientMap out;
  for (const auto& [name, p] : store) out.emplace(name, p.grad);
  return out;
}

namespace {

struct Stacked {
  Tensor x;
  LatentBatch z;
};

Stacked stack_samples(const Tensor& x, const std::vector<LatentBatch>& samples) {
  if (x.rows() == 0 || samples.empty()) throw std::invalid_argument("gradient estimate needs a non-empty batch");
  for (const auto& s : samples) {
    if (s.rows() != x.rows()) throw ShapeError("sample set does not match the batch size");
  }
  return {repeat_rows(x, samples.size()), concat_batches(samples)};
}

// Ascend mean log p_θ(x, z) into gen's gradients.
void accumulate_theta(const Stacked& b, GenerativeModel& gen) {
  Tape tape;
  tape.backward(mean(log_joint(tape, gen, b.x, b.z)));
}

Tensor with_input_noise(const Tensor& x, double std_dev, Rng* rng) {
  if (std_dev <= 0.0) return x;
  if (!rng) throw std::invalid_argument("classifier noise needs a random source");
  Tensor out = x;
  for (double& v : out.data()) v += std_dev * standard_normal(*rng);
  return out;
}

// mean over rows of log q(y | x) for the given labels.
Var mean_label_log_prob(Tape& tape, InferenceModel& inf, const Tensor& x, std::span<const std::size_t> labels) {
  return mean(categorical_logit_log_prob(inf.class_logits(tape, x), labels));
}

}  // namespace

void unsup_gradients(const UnsupBatch& batch, GenerativeModel& gen, InferenceModel& inf) {
  const Stacked b = stack_samples(batch.x, batch.samples);
  gen.params().zero_grad();
  inf.params().zero_grad();
  accumulate_theta(b, gen);
  Tape tape;
  tape.backward(mean(inf.log_q(tape, b.x, b.z, inf.latent_spec().has_classes())));
}

void semi_gradients(const UnsupBatch* u, const SemiBatch* s, const SemiConfig& cfg, GenerativeModel& gen,
                    InferenceModel& inf, Rng* noise_rng) {
  const bool has_u = u && u->x.rows() > 0;
  const bool has_s = s && s->x.rows() > 0;
  if (!has_s && cfg.alpha > 0.0) throw std::invalid_argument("semi_gradients: empty labeled batch with alpha > 0");
  if (!has_u && !has_s) throw std::invalid_argument("semi_gradients: both batches are empty");
  gen.params().zero_grad();
  inf.params().zero_grad();

  if (has_u) {
    const Stacked b = stack_samples(u->x, u->samples);
    accumulate_theta(b, gen);
    Tape tape;
    Var objective = mean(inf.log_q(tape, b.x, b.z, inf.latent_spec().has_classes()));
    if (cfg.entropy_weight > 0.0) {
      Var logits = inf.class_logits(tape, with_input_noise(u->x, cfg.classifier_noise, noise_rng));
      // −H(q(y|x)) = Σ_y q log q
      Var neg_entropy = mean(row_sum(mul(softmax(logits), log_softmax(logits))));
      objective = add(objective, scale(neg_entropy, cfg.entropy_weight));
    }
    tape.backward(objective);
  }
  if (has_s) {
    if (s->labels.size() != s->x.rows()) throw ShapeError("semi_gradients: one label per labeled row needed");
    const Stacked b = stack_samples(s->x, s->samples);
    for (std::size_t r = 0; r < b.z.rows(); ++r) {
      if (b.z.labels.at(r) != s->labels[r % s->x.rows()]) {
        throw std::invalid_argument("semi_gradients: labeled samples must carry the observed labels");
      }
    }
    accumulate_theta(b, gen);
    Tape tape;
    Var objective = mean(inf.log_q(tape, b.x, b.z, false));
    if (cfg.alpha > 0.0) {
      Tensor xs = with_input_noise(s->x, cfg.classifier_noise, noise_rng);
      objective = add(objective, scale(mean_label_log_prob(tape, inf, xs, s->labels), cfg.alpha));
    }
    tape.backward(objective);
  }
}

void classifier_gradients(const Tensor& x, std::span<const std::size_t> labels, const SemiConfig& cfg,
                          InferenceModel& inf, Rng* noise_rng) {
  if (x.rows() == 0) throw std::invalid_argument("classifier_gradients: empty labeled batch");
  inf.params().zero_grad();
  Tape tape;
  Tensor xs = with_input_noise(x, cfg.classifier_noise, noise_rng);
  tape.backward(scale(mean_label_log_prob(tape, inf, xs, labels), cfg.alpha));
}

std::vector<std::size_t> predict_label(InferenceModel& inf, const Tensor& x) {
  Tape tape(false);
  const Tensor logits = inf.class_logits(tape, x).value();
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = argmax(logits.row(r));
  return out;
}

double classification_error(InferenceModel& inf, const Tensor& x, std::span<const std::size_t> labels) {
  if (labels.size() != x.rows() || labels.empty()) throw ShapeError("classification_error: label count mismatch");
  const auto pred = predict_label(inf, x);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------

void MetricsRow::set(const std::string& key, double v) {
  for (auto& [k, value] : values) {
    if (k == key) {
      value = v;
      return;
    }
  }
  values.emplace_back(key, v);
}

std::optional<double> MetricsRow::get(const std::string& key) const {
  for (const auto& [k, v] : values) {
    if (k == key) return v;
  }
  return std::nullopt;
}

TrainRun run_training(IterativeTrainer& trainer, const LoopConfig& loop, const MetricsHook& extra,
                      const RowSink& sink) {
  TrainRun run;
  auto emit = [&](std::uint64_t t) {
    MetricsRow row;
    row.iteration = t;
    trainer.fill_metrics(row, t);
    if (extra) extra(row);
    if (sink) sink(row);
    run.rows.push_back(std::move(row));
  };
  if (loop.start_iteration == 0) emit(0);
  std::size_t streak = 0;
  std::uint64_t t = loop.start_iteration;
  while (t < loop.iterations) {
    ++t;
    try {
      trainer.step(t);
      streak = 0;
    } catch (const NumericError& e) {
      ++run.skipped_updates;
      if (++streak > loop.max_nonfinite_streak) {
        run.last_iteration = t;
        throw TrainingAborted("training aborted at iteration " + std::to_string(t) + " after " +
                              std::to_string(streak) + " consecutive non-finite updates: " + e.what());
      }
    }
    const bool last = t == loop.iterations;
    if (last || (loop.metric_interval > 0 && t % loop.metric_interval == 0)) emit(t);
  }
  run.last_iteration = t;
  return run;
}

// ---------------------------------------------------------------------------

double NoiseSchedule::std_at(std::uint64_t t) const {
  return std::sqrt(t > switch_at ? late_var : early_var);
}

std::vector<std::size_t> minibatch_indices(std::size_t n, std::size_t batch, std::uint64_t t, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("minibatch_indices: empty dataset");
  if (batch == 0 || batch >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  const std::uint64_t per_epoch = n / batch;  // the ragged tail of each epoch is dropped
  const std::uint64_t epoch = (t - 1) / per_epoch;
  const std::uint64_t chunk = (t - 1) % per_epoch;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
  std::shuffle(perm.begin(), perm.end(), rng);
  return {perm.begin() + static_cast<long>(chunk * batch), perm.begin() + static_cast<long>((chunk + 1) * batch)};
}

JsaTrainer::JsaTrainer(GenerativeModel& gen, InferenceModel& inf, Tensor unlabeled, JsaConfig config,
                       std::uint64_t seed)
    : gen_(gen),
      inf_(inf),
      unlabeled_(std::move(unlabeled)),
      config_(std::move(config)),
      seed_(seed),
      rng_(seed),
      unlabeled_chains_(gen.latent_spec(), unlabeled_.rows()) {
  config_.sa.validate();
  if (unlabeled_.rows() == 0) throw std::invalid_argument("JsaTrainer: empty training set");
  inf_.set_proposal_noise_std(config_.proposal_noise.std_at(1));
}

JsaTrainer::JsaTrainer(GenerativeModel& gen, InferenceModel& inf, Tensor unlabeled, Tensor labeled,
                       std::vector<std::size_t> labels, JsaConfig config, std::uint64_t seed)
    : gen_(gen),
      inf_(inf),
      unlabeled_(std::move(unlabeled)),
      labeled_(std::move(labeled)),
      labels_(std::move(labels)),
      semi_(true),
      config_(std::move(config)),
      seed_(seed),
      rng_(seed),
      unlabeled_chains_(gen.latent_spec(), unlabeled_.rows()),
      labeled_chains_(gen.latent_spec(), labeled_.rows()) {
  config_.sa.validate();
  config_.semi.validate();
  if (!gen.latent_spec().has_classes() || !inf.has_classifier()) {
    throw std::invalid_argument("JsaTrainer: semi-supervised training needs a class factor and classifier head");
  }
  if (labels_.size() != labeled_.rows() || labels_.empty()) {
    throw std::invalid_argument("JsaTrainer: labeled set must be non-empty with one label per row");
  }
  inf_.set_proposal_noise_std(config_.proposal_noise.std_at(1));
}

std::vector<LatentBatch> JsaTrainer::sample(ChainStore& store, std::span<const std::size_t> idx, const Tensor& x,
                                            std::vector<std::size_t> labels) {
  const SAConfig& sa = config_.sa;
  ChainBatch chains;
  if (sa.chain_policy == ChainPolicy::cached) {
    chains = store.gather(idx, x, std::move(labels), gen_, inf_, rng_);
  } else {
    chains.x = x;
    chains.clamped_labels = std::move(labels);
  }
  AcceptanceStats stats;
  auto samples = multi_move_sample(chains, gen_, inf_, sa.moves, sa.warmup, sa.chain_policy, rng_, stats);
  if (sa.chain_policy == ChainPolicy::cached) store.scatter(idx, chains);
  interval_stats_.merge(stats);
  total_stats_.merge(stats);
  return samples;
}

void JsaTrainer::step(std::uint64_t t) {
  inf_.set_proposal_noise_std(config_.proposal_noise.std_at(t));
  const SemiConfig& semi = config_.semi;
  if (!semi_) {
    const auto idx = minibatch_indices(unlabeled_.rows(), config_.batch_size, t, seed_);
    UnsupBatch batch{take_rows(unlabeled_, idx), {}};
    batch.samples = sample(unlabeled_chains_, idx, batch.x, {});
    unsup_gradients(batch, gen_, inf_);
  } else {
    const auto sidx = minibatch_indices(labeled_.rows(), semi.labeled_batch, t, seed_ ^ 0x5bd1e995ULL);
    Tensor xs = take_rows(labeled_, sidx);
    std::vector<std::size_t> ys(sidx.size());
    for (std::size_t i = 0; i < sidx.size(); ++i) ys[i] = labels_[sidx[i]];
    if (semi.classifier_only) {
      classifier_gradients(xs, ys, semi, inf_, &rng_);
      gen_.params().zero_grad();
    } else {
      SemiBatch s{xs, ys, {}};
      s.samples = sample(labeled_chains_, sidx, xs, ys);
      const bool use_u = t > semi.warm_start && unlabeled_.rows() > 0;
      if (use_u) {
        const auto uidx = minibatch_indices(unlabeled_.rows(), semi.unlabeled_batch, t, seed_);
        UnsupBatch u{take_rows(unlabeled_, uidx), {}};
        u.samples = sample(unlabeled_chains_, uidx, u.x, {});
        semi_gradients(&u, &s, semi, gen_, inf_, &rng_);
      } else {
        semi_gradients(nullptr, &s, semi, gen_, inf_, &rng_);
      }
    }
  }
  if (!gen_.params().grads_finite() || !inf_.params().grads_finite()) {
    throw NumericError("non-finite gradient at iteration " + std::to_string(t));
  }
  const ParamStore before = gen_.params();
  sa_step(gen_.params(), config_.sa, t);
  try {
    sa_step(inf_.params(), config_.sa, t);
  } catch (const NumericError&) {
    gen_.params() = before;
    throw;
  }
}

void JsaTrainer::fill_metrics(MetricsRow& row, std::uint64_t t) {
  row.set("gamma", lr_schedule(config_.sa, std::max<std::uint64_t>(t, 1)));
  row.set("acceptance_rate", interval_stats_.rate());
  row.set("numeric_rejects", static_cast<double>(interval_stats_.numeric_rejects));
  interval_stats_ = {};
}

}  // namespace jsa
