#pragma once

#include "jsa/distributions.hpp"
#include "jsa/nn.hpp"
#include "jsa/tensor.hpp"

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace jsa {

// ---------------------------------------------------------------------------
// Contracts used by the samplers and trainers.

/// Directed model p_θ(x, y, h) = p(y) p(h) p_θ(x | h, y) with a fixed prior.
class GenerativeModel {
 public:
  virtual ~GenerativeModel() = default;

  virtual const LatentSpec& latent_spec() const = 0;
  virtual ParamStore& params() = 0;
  virtual std::size_t observation_dim() const = 0;
  /// log p_θ(x | z) for each row of x; z carries (h, y).
  virtual Var log_likelihood(Tape& tape, const Tensor& x, const LatentBatch& z) = 0;
  /// log p_θ(x | h) with a Gaussian latent supplied as a tape value, so that
  /// gradients flow into h. Throws UnsupportedFactorError by default.
  virtual Var log_likelihood_at(Tape& tape, const Tensor& x, Var latent);
  virtual Tensor sample_observations(const LatentBatch& z, Rng& rng) = 0;
  virtual std::string architecture() const = 0;
};

/// log p(y) + log p(h) + log p_θ(x | h, y) per row. Throws if the model has
/// a class factor and z carries no labels.
Var log_joint(Tape& tape, GenerativeModel& gen, const Tensor& x, const LatentBatch& z);
std::vector<double> log_joint_values(GenerativeModel& gen, const Tensor& x, const LatentBatch& z);

/// Draws z ~ p(h) p(y) and then x ~ p_θ(x | z).
Tensor generate(GenerativeModel& gen, std::size_t count, Rng& rng);

struct Proposal {
  LatentBatch z;
  std::vector<double> log_q;  // log-density under the proposal actually sampled from
};

/// Inference model q_φ(y, h | x) = q_φ(y | x) q_φ(h | x), used as the MIS
/// proposal. When labels are clamped, y is observed and only h is drawn.
class InferenceModel {
 public:
  virtual ~InferenceModel() = default;

  virtual const LatentSpec& latent_spec() const = 0;
  virtual ParamStore& params() = 0;

  /// log q_φ(h | x) [+ log q_φ(y | x) when include_label], differentiable in φ.
  /// Evaluated without exploration noise.
  virtual Var log_q(Tape& tape, const Tensor& x, const LatentBatch& z, bool include_label) = 0;

  /// Draws a proposal for every row of x. Gaussian heads are widened by the
  /// exploration noise; log_q is the density of that widened proposal.
  virtual Proposal propose(const Tensor& x, const std::vector<std::size_t>* clamped_labels, Rng& rng) = 0;

  /// Density of the (noise-widened) proposal at z.
  virtual std::vector<double> proposal_log_density(const Tensor& x, const LatentBatch& z, bool include_label) = 0;

  virtual bool has_classifier() const { return false; }
  virtual Var class_logits(Tape& tape, const Tensor& x);
  virtual std::string architecture() const = 0;

  double proposal_noise_std() const { return proposal_noise_; }
  void set_proposal_noise_std(double s) { proposal_noise_ = s; }

 protected:
  double proposal_noise_ = 0.0;
};

Proposal encoder_propose(InferenceModel& inf, const Tensor& x, const std::vector<std::size_t>* labels, Rng& rng);

/// Network outputs of a parametric encoder; absent heads are invalid Vars.
struct EncoderHeads {
  Var bernoulli_logits;
  Var gauss_mean;
  Var gauss_log_var;
  Var class_logits;
};

/// Implements the proposal contract for encoders that emit distribution
/// parameters per latent factor kind.
class HeadedEncoder : public InferenceModel {
 public:
  Var log_q(Tape& tape, const Tensor& x, const LatentBatch& z, bool include_label) override;
  Proposal propose(const Tensor& x, const std::vector<std::size_t>* clamped_labels, Rng& rng) override;
  std::vector<double> proposal_log_density(const Tensor& x, const LatentBatch& z, bool include_label) override;
  Var class_logits(Tape& tape, const Tensor& x) override;

  virtual EncoderHeads heads(Tape& tape, const Tensor& x) = 0;

 private:
  std::vector<double> widened_log_density(const EncoderHeads& heads, const LatentBatch& z, bool include_label) const;
};

// ---------------------------------------------------------------------------
// Factor analysis.

/// x = μ + P h + N(0, r I), h ~ N(0, I).
struct FAModel {
  Eigen::Vector3d mu;
  Eigen::Matrix<double, 3, 2> loading;
  double noise_var = 0.04;

  static FAModel reference();

  Eigen::Matrix3d marginal_cov() const;
  FullGaussian marginal() const;
  double log_marginal(const Eigen::Vector3d& x) const;
  Eigen::Vector3d sample(Rng& rng) const;
};

/// Closed-form p(h | x) = N(Σ Pᵀ R⁻¹ (x − μ), Σ), Σ = (Pᵀ R⁻¹ P + I)⁻¹.
FullGaussian fa_exact_posterior(const FAModel& fa, const Eigen::Vector3d& x);
/// KL[N(μ₁, C₁) ‖ N(μ₂, C₂)] between the two marginals.
double fa_marginal_kl(const FAModel& truth, const FAModel& estimate);

/// Linear-Gaussian decoder x = b + [bits, reals] W + N(0, σ² I) with fixed σ².
/// With a 2-d Gaussian latent and 3-d observations it is the FA model with
/// learnable (μ, P).
class LinearGaussianDecoder : public GenerativeModel {
 public:
  LinearGaussianDecoder(LatentSpec spec, std::size_t obs_dim, double noise_var, Rng& rng);

  const LatentSpec& latent_spec() const override { return spec_; }
  ParamStore& params() override { return params_; }
  std::size_t observation_dim() const override { return obs_dim_; }
  Var log_likelihood(Tape& tape, const Tensor& x, const LatentBatch& z) override;
  Var log_likelihood_at(Tape& tape, const Tensor& x, Var latent) override;
  Tensor sample_observations(const LatentBatch& z, Rng& rng) override;
  std::string architecture() const override;

  double noise_var() const { return noise_var_; }
  void set_from_fa(const FAModel& fa);
  FAModel to_fa() const;

 private:
  LatentSpec spec_;
  ParamStore params_;
  std::size_t obs_dim_;
  double noise_var_;
};

// ---------------------------------------------------------------------------
// MLP model pairs.

enum class ObservationModel { diag_gaussian, bernoulli_pixel };

/// MLP decoder over the latent [bits, reals, one-hot(y)].
class MlpDecoder : public GenerativeModel {
 public:
  MlpDecoder(LatentSpec spec, std::size_t obs_dim, std::vector<std::size_t> hidden, ObservationModel obs, Rng& rng);

  const LatentSpec& latent_spec() const override { return spec_; }
  ParamStore& params() override { return params_; }
  std::size_t observation_dim() const override { return obs_dim_; }
  Var log_likelihood(Tape& tape, const Tensor& x, const LatentBatch& z) override;
  Var log_likelihood_at(Tape& tape, const Tensor& x, Var latent) override;
  Tensor sample_observations(const LatentBatch& z, Rng& rng) override;
  std::string architecture() const override;

  /// Log-likelihood given decoder input features [bits, reals, one-hot(y)].
  Var log_likelihood_features(Tape& tape, const Tensor& x, Var features);

  /// Floor on the Gaussian log-variance head, applied as floor + softplus(raw - floor).
  void set_min_log_var(double v) { min_log_var_ = v; }

 private:
  LatentSpec spec_;
  ParamStore params_;
  std::size_t obs_dim_;
  ObservationModel obs_;
  Mlp net_;
  double min_log_var_ = -12.0;
};

/// Builds the decoder input [bits, reals, one-hot(y)] as a constant.
Tensor latent_features(const LatentSpec& spec, const LatentBatch& z);

/// MLP encoder with a shared trunk and one head per latent factor kind.
class MlpEncoder : public HeadedEncoder {
 public:
  MlpEncoder(LatentSpec spec, std::size_t obs_dim, std::vector<std::size_t> hidden, Rng& rng);

  const LatentSpec& latent_spec() const override { return spec_; }
  ParamStore& params() override { return params_; }
  bool has_classifier() const override { return spec_.has_classes(); }
  std::string architecture() const override;
  EncoderHeads heads(Tape& tape, const Tensor& x) override;

 private:
  LatentSpec spec_;
  ParamStore params_;
  std::size_t obs_dim_;
  Mlp net_;
};

// ---------------------------------------------------------------------------
// LSTM sequence pair. Sequences are [B, T] tensors of token indices.

struct SequenceShape {
  std::size_t length = 12;
  std::size_t vocab = 6;
};

/// Autoregressive decoder p_θ(x_t | x_{t−1}, h): 2-layer LSTM (widths 50, 6)
/// followed by a dense projection to logits. x_0 is the zero vector.
class SeqDecoder : public GenerativeModel {
 public:
  SeqDecoder(LatentSpec spec, SequenceShape shape, std::size_t width1, std::size_t width2, Rng& rng);

  const LatentSpec& latent_spec() const override { return spec_; }
  ParamStore& params() override { return params_; }
  std::size_t observation_dim() const override { return shape_.length; }
  Var log_likelihood(Tape& tape, const Tensor& x, const LatentBatch& z) override;
  Tensor sample_observations(const LatentBatch& z, Rng& rng) override;
  std::string architecture() const override;

  /// log p_θ(x_t | x_{t−1}, h) for t = 1..T, each [B].
  std::vector<Var> step_log_probs(Tape& tape, const Tensor& x, const LatentBatch& z);

 private:
  LatentSpec spec_;
  SequenceShape shape_;
  ParamStore params_;
  LstmCell layer1_;
  LstmCell layer2_;
  Dense out_;
};

/// Encoder q_φ(h | x): 2-layer LSTM (50, 50) over the sequence, dense layer
/// from the final state to Bernoulli logits.
class SeqEncoder : public HeadedEncoder {
 public:
  SeqEncoder(LatentSpec spec, SequenceShape shape, std::size_t width1, std::size_t width2, Rng& rng);

  const LatentSpec& latent_spec() const override { return spec_; }
  ParamStore& params() override { return params_; }
  std::string architecture() const override;
  EncoderHeads heads(Tape& tape, const Tensor& x) override;

 private:
  LatentSpec spec_;
  SequenceShape shape_;
  ParamStore params_;
  LstmCell layer1_;
  LstmCell layer2_;
  Dense out_;
};

/// One-hot encoding of column t of a token-index tensor; zeros for t < 0.
Tensor one_hot_column(const Tensor& tokens, long t, std::size_t vocab);

// ---------------------------------------------------------------------------
// Exact proposals (proposal equals the posterior pointwise).

/// Proposal equal to the exact FA posterior of a fixed FAModel. Has no
/// trainable parameters.
class FAPosteriorProposal : public InferenceModel {
 public:
  explicit FAPosteriorProposal(FAModel fa);

  const LatentSpec& latent_spec() const override { return spec_; }
  ParamStore& params() override { return params_; }
  Var log_q(Tape& tape, const Tensor& x, const LatentBatch& z, bool include_label) override;
  Proposal propose(const Tensor& x, const std::vector<std::size_t>* clamped_labels, Rng& rng) override;
  std::vector<double> proposal_log_density(const Tensor& x, const LatentBatch& z, bool include_label) override;
  std::string architecture() const override { return "fa_exact_posterior"; }

 private:
  FAModel fa_;
  LatentSpec spec_;
  ParamStore params_;
};

/// Posterior of a Bernoulli-latent model by enumerating all 2^d states,
/// indexed by the bit pattern (bit i of the index is latent bit i).
std::vector<double> enumerate_bernoulli_posterior(GenerativeModel& gen, std::span<const double> x);

/// Proposal that samples the exact enumerated posterior of `gen`.
class EnumeratedPosteriorProposal : public InferenceModel {
 public:
  explicit EnumeratedPosteriorProposal(GenerativeModel& gen);

  const LatentSpec& latent_spec() const override { return gen_.latent_spec(); }
  ParamStore& params() override { return params_; }
  Var log_q(Tape& tape, const Tensor& x, const LatentBatch& z, bool include_label) override;
  Proposal propose(const Tensor& x, const std::vector<std::size_t>* clamped_labels, Rng& rng) override;
  std::vector<double> proposal_log_density(const Tensor& x, const LatentBatch& z, bool include_label) override;
  std::string architecture() const override { return "enumerated_posterior"; }

 private:
  GenerativeModel& gen_;
  ParamStore params_;
};

std::size_t bits_to_index(std::span<const double> bits);
std::vector<double> index_to_bits(std::size_t index, std::size_t dim);

}  // namespace jsa
