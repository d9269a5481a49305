#pragma once

#include "jsa/distributions.hpp"
#include "jsa/models.hpp"
#include "jsa/sa_mis.hpp"
#include "jsa/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace jsa {

/// Observations with chain-sampled latents; samples[j] holds the j-th of m
/// moves for every row of x.
struct UnsupBatch {
  Tensor x;
  std::vector<LatentBatch> samples;
};

/// Labeled observations with chain-sampled h; the labels are never resampled.
struct SemiBatch {
  Tensor x;
  std::vector<std::size_t> labels;
  std::vector<LatentBatch> samples;
};

struct SemiConfig {
  double alpha = 1.0;
  double entropy_weight = 0.0;
  std::size_t unlabeled_batch = 100;
  std::size_t labeled_batch = 100;
  std::uint64_t warm_start = 0;  // supervised-only iterations
  double classifier_noise = 0.0;  // std of input noise for the classifier terms
  /// Baseline mode: φ follows only α log q(y|x) on the labeled batch.
  bool classifier_only = false;

  void validate() const;
};

/// Named copy of every accumulated gradient in a store.
using GradientMap = std::map<std::string, Tensor>;
GradientMap snapshot_grads(const ParamStore& store);

/// Writes the θ-update (batch mean of ∂log p_θ(x, z)) into gen's gradient
/// accumulators and the φ-update (batch mean of ∂log q_φ(z | x)) into inf's.
/// Both are ascent directions. The mean runs over all m·B sampled rows.
void unsup_gradients(const UnsupBatch& batch, GenerativeModel& gen, InferenceModel& inf);

/// Algorithm-1 updates: means over U of ∂log p_θ(x,y,h) and ∂log q_φ(y,h|x),
/// plus means over S of ∂log p_θ(x,y,h) and ∂[log q_φ(h|x) + α log q_φ(y|x)],
/// plus the optional entropy term on U. Either batch may be null.
void semi_gradients(const UnsupBatch* u, const SemiBatch* s, const SemiConfig& cfg, GenerativeModel& gen,
                    InferenceModel& inf, Rng* noise_rng = nullptr);

/// Gradient of α · mean log q_φ(y | x) over a labeled batch, alone.
void classifier_gradients(const Tensor& x, std::span<const std::size_t> labels, const SemiConfig& cfg,
                          InferenceModel& inf, Rng* noise_rng = nullptr);

/// argmax_y q_φ(y | x) per row; lowest index on ties.
std::vector<std::size_t> predict_label(InferenceModel& inf, const Tensor& x);
double classification_error(InferenceModel& inf, const Tensor& x, std::span<const std::size_t> labels);

// ---------------------------------------------------------------------------
// Training loop shared by JSA and VAE.

struct MetricsRow {
  std::uint64_t iteration = 0;
  std::vector<std::pair<std::string, double>> values;

  void set(const std::string& key, double v);
  std::optional<double> get(const std::string& key) const;
};

class TrainingAborted : public NumericError {
 public:
  using NumericError::NumericError;
};

class IterativeTrainer {
 public:
  virtual ~IterativeTrainer() = default;
  /// One update at iteration t >= 1. Throws NumericError when the update is
  /// not finite; parameters are then unchanged.
  virtual void step(std::uint64_t t) = 0;
  /// Standard columns (step size, acceptance rate, ...) for iteration t.
  virtual void fill_metrics(MetricsRow& row, std::uint64_t t) = 0;
};

struct LoopConfig {
  std::uint64_t iterations = 0;
  std::uint64_t metric_interval = 100;
  std::uint64_t start_iteration = 0;   // > 0 when resuming
  std::size_t max_nonfinite_streak = 10;
};

using MetricsHook = std::function<void(MetricsRow&)>;
using RowSink = std::function<void(const MetricsRow&)>;

struct TrainRun {
  std::vector<MetricsRow> rows;
  std::uint64_t last_iteration = 0;
  std::size_t skipped_updates = 0;
};

/// Runs iterations start+1..iterations, emitting a row at start (when 0),
/// every metric_interval, and at the end. More than max_nonfinite_streak
/// consecutive non-finite updates raise TrainingAborted.
TrainRun run_training(IterativeTrainer& trainer, const LoopConfig& loop, const MetricsHook& extra = {},
                      const RowSink& sink = {});

// ---------------------------------------------------------------------------

/// Proposal exploration noise: variance `early` until `switch_at`, then `late`.
struct NoiseSchedule {
  double early_var = 0.0;
  double late_var = 0.0;
  std::uint64_t switch_at = 0;

  double std_at(std::uint64_t t) const;
};

struct JsaConfig {
  SAConfig sa;
  std::size_t batch_size = 0;  // 0 = full batch
  NoiseSchedule proposal_noise;
  SemiConfig semi;
};

/// Index set for iteration t: consecutive chunks of a per-epoch permutation
/// derived from (seed, epoch), so any iteration can be replayed statelessly.
std::vector<std::size_t> minibatch_indices(std::size_t n, std::size_t batch, std::uint64_t t, std::uint64_t seed);

/// JSA trainer. Unsupervised when no labeled set is given, semi-supervised
/// otherwise (the unlabeled set may then be empty for supervised-only runs).
class JsaTrainer : public IterativeTrainer {
 public:
  JsaTrainer(GenerativeModel& gen, InferenceModel& inf, Tensor unlabeled, JsaConfig config, std::uint64_t seed);
  JsaTrainer(GenerativeModel& gen, InferenceModel& inf, Tensor unlabeled, Tensor labeled,
             std::vector<std::size_t> labels, JsaConfig config, std::uint64_t seed);

  void step(std::uint64_t t) override;
  void fill_metrics(MetricsRow& row, std::uint64_t t) override;

  const AcceptanceStats& acceptance() const { return total_stats_; }
  Rng& rng() { return rng_; }
  ChainStore& unlabeled_chains() { return unlabeled_chains_; }
  ChainStore& labeled_chains() { return labeled_chains_; }
  const JsaConfig& config() const { return config_; }

 private:
  std::vector<LatentBatch> sample(ChainStore& store, std::span<const std::size_t> idx, const Tensor& x,
                                  std::vector<std::size_t> labels);

  GenerativeModel& gen_;
  InferenceModel& inf_;
  Tensor unlabeled_;
  Tensor labeled_;
  std::vector<std::size_t> labels_;
  bool semi_ = false;
  JsaConfig config_;
  std::uint64_t seed_;
  Rng rng_;
  ChainStore unlabeled_chains_;
  ChainStore labeled_chains_;
  AcceptanceStats total_stats_;
  AcceptanceStats interval_stats_;
};

}  // namespace jsa
