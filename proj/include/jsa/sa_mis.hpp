#pragma once

#include "jsa/distributions.hpp"
#include "jsa/models.hpp"
#include "jsa/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace jsa {

enum class ScheduleKind { constant, constant_then_inverse_t, exponential_decay };
enum class ChainPolicy { cached, restart };
enum class OptimizerKind { sa, sgd, adam };

/// Step-size schedule, optimizer and Markov-kernel settings for one SA run.
struct SAConfig {
  ScheduleKind schedule = ScheduleKind::constant;
  double base_rate = 1e-2;
  /// Switch point T0 of constant-then-1/t, or onset of exponential decay.
  std::uint64_t switch_iteration = 0;
  double decay_rate = 0.995;
  std::uint64_t decay_interval = 100;

  std::size_t moves = 1;   // m, states averaged per update
  std::size_t warmup = 0;  // W, discarded transitions after a restart
  ChainPolicy chain_policy = ChainPolicy::cached;

  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// γ_t for t >= 1.
double lr_schedule(const SAConfig& config, std::uint64_t t);

struct AcceptanceStats {
  std::uint64_t proposals = 0;
  std::uint64_t accepts = 0;
  std::uint64_t numeric_rejects = 0;

  double rate() const { return proposals == 0 ? 0.0 : static_cast<double>(accepts) / static_cast<double>(proposals); }
  void merge(const AcceptanceStats& other);
};

/// State of one datapoint's chain: current latent and its cached
/// log w = log p_θ(x_k, z) − log q(z | x_k).
struct ChainState {
  std::size_t index = 0;
  LatentValue sample;
  double log_weight = 0.0;
};

/// Chains for a batch of datapoints, advanced together (one row each).
struct ChainBatch {
  Tensor x;
  LatentBatch z;
  std::vector<double> log_weight;
  /// When non-empty, y is observed: proposals keep these labels and the
  /// weight uses q(h | x) only.
  std::vector<std::size_t> clamped_labels;

  std::size_t rows() const { return x.rows(); }
  bool labels_clamped() const { return !clamped_labels.empty(); }
};

/// log p_θ(x, z) − log q(z | x) for each row, under current parameters.
std::vector<double> log_importance_weights(const Tensor& x, const LatentBatch& z, bool labels_clamped,
                                           GenerativeModel& gen, InferenceModel& inf);

/// Draws initial states from the proposal and caches their weights.
ChainBatch start_chains(const Tensor& x, std::vector<std::size_t> clamped_labels, GenerativeModel& gen,
                        InferenceModel& inf, Rng& rng);

/// Recomputes every cached weight; needed after any parameter update.
void refresh_weights(ChainBatch& chains, GenerativeModel& gen, InferenceModel& inf);

/// One Metropolis independence step per row, in log space. A proposal with a
/// non-finite weight is rejected and counted as a numeric reject.
void mis_transition(ChainBatch& chains, GenerativeModel& gen, InferenceModel& inf, Rng& rng, AcceptanceStats& stats);

/// Single-chain form of mis_transition.
ChainState mis_transition(const ChainState& chain, const Tensor& x_row, GenerativeModel& gen, InferenceModel& inf,
                          Rng& rng, AcceptanceStats& stats);

/// Collects m consecutive chain states. Under the restart policy the chains
/// are redrawn from the proposal and advanced `warmup` discarded steps first;
/// under the cached policy they continue from their stored state after a
/// weight refresh.
std::vector<LatentBatch> multi_move_sample(ChainBatch& chains, GenerativeModel& gen, InferenceModel& inf,
                                           std::size_t moves, std::size_t warmup, ChainPolicy policy, Rng& rng,
                                           AcceptanceStats& stats);

/// Per-datapoint chain memory for the cached policy.
class ChainStore {
 public:
  ChainStore() = default;
  ChainStore(LatentSpec spec, std::size_t size);

  std::size_t size() const { return initialized_.size(); }
  bool initialized(std::size_t i) const { return initialized_.at(i) != 0; }

  /// Builds a ChainBatch for the given datapoints; uninitialised rows start
  /// from a proposal draw, the rest resume from memory with fresh weights.
  ChainBatch gather(std::span<const std::size_t> indices, const Tensor& x, std::vector<std::size_t> clamped_labels,
                    GenerativeModel& gen, InferenceModel& inf, Rng& rng) const;
  void scatter(std::span<const std::size_t> indices, const ChainBatch& chains);

  const LatentBatch& samples() const { return samples_; }
  const std::vector<char>& initialized_flags() const { return initialized_; }
  void restore(LatentBatch samples, std::vector<char> flags);

 private:
  LatentSpec spec_;
  LatentBatch samples_;
  std::vector<char> initialized_;
};

/// λ ← λ + γ_t F, or the Adam-preconditioned ascent step, where F is the
/// gradient accumulator of every parameter. On a non-finite F or result the
/// store is left untouched and NumericError is thrown.
void sa_step(ParamStore& store, const SAConfig& config, std::uint64_t t);

std::string to_string(ScheduleKind k);
std::string to_string(ChainPolicy p);
std::string to_string(OptimizerKind k);
ScheduleKind parse_schedule(const std::string& s);
ChainPolicy parse_chain_policy(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);

}  // namespace jsa
