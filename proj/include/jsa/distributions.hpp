#pragma once

#include "jsa/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace jsa {

using Rng = std::mt19937_64;

class UnsupportedFactorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FactorKind { bernoulli, gaussian, categorical };

struct LatentFactor {
  FactorKind kind = FactorKind::bernoulli;
  std::size_t dim = 1;        // number of classes for categorical
  double prior_mean = 0.5;    // Bernoulli prior mean; unused otherwise

  friend bool operator==(const LatentFactor&, const LatentFactor&) = default;
};

/// Product latent space of Bernoulli, standard-Gaussian and (at most one)
/// categorical factors. Values are stored grouped by kind, each group in
/// factor order.
class LatentSpec {
 public:
  LatentSpec() = default;
  explicit LatentSpec(std::vector<LatentFactor> factors);

  static LatentSpec bernoulli(std::size_t dim, double prior_mean = 0.5);
  static LatentSpec gaussian(std::size_t dim);

  const std::vector<LatentFactor>& factors() const { return factors_; }
  std::size_t bernoulli_dim() const { return bernoulli_dim_; }
  std::size_t gaussian_dim() const { return gaussian_dim_; }
  /// 0 when there is no class factor.
  std::size_t num_classes() const { return num_classes_; }
  bool has_classes() const { return num_classes_ > 0; }
  std::size_t total_dim() const { return bernoulli_dim_ + gaussian_dim_ + num_classes_; }

  /// Copy with a categorical factor appended.
  LatentSpec with_classes(std::size_t k) const;
  /// Copy without the categorical factor.
  LatentSpec without_classes() const;

  /// One-line text form, e.g. "bernoulli:4:0.5,gaussian:1,categorical:10".
  std::string to_string() const;
  static LatentSpec parse(const std::string& text);

  friend bool operator==(const LatentSpec&, const LatentSpec&) = default;

 private:
  std::vector<LatentFactor> factors_;
  std::size_t bernoulli_dim_ = 0;
  std::size_t gaussian_dim_ = 0;
  std::size_t num_classes_ = 0;
};

struct LatentValue {
  std::vector<double> bits;
  std::vector<double> reals;
  std::optional<std::size_t> label;

  /// (bits..., reals..., class-index) in factor order.
  std::vector<double> serialize() const;
  static LatentValue deserialize(const LatentSpec& spec, std::span<const double> flat);
  void validate(const LatentSpec& spec) const;

  friend bool operator==(const LatentValue&, const LatentValue&) = default;
};

/// A batch of latent values with one row per datapoint.
struct LatentBatch {
  Tensor bits;   // [B, bernoulli_dim]
  Tensor reals;  // [B, gaussian_dim]
  std::vector<std::size_t> labels;  // size B when the spec has classes

  static LatentBatch empty(const LatentSpec& spec, std::size_t rows);
  std::size_t rows() const { return bits.rows(); }

  LatentValue row(std::size_t r) const;
  void set_row(std::size_t r, const LatentValue& v);
  LatentBatch take(std::span<const std::size_t> rows) const;

  friend bool operator==(const LatentBatch&, const LatentBatch&) = default;
};

LatentBatch concat_batches(std::span<const LatentBatch> parts);

struct DiagGaussianParams {
  std::vector<double> mean;
  std::vector<double> log_var;

  void validate() const;
};

struct FullGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  double correlation(std::size_t i, std::size_t j) const;
};

// --- log-densities --------------------------------------------------------

/// Bernoulli log-mass with means clamped to [1e-7, 1-1e-7]; every clamped
/// entry increments bernoulli_clamp_count().
double bernoulli_log_prob(std::span<const double> means, std::span<const double> bits);
double bernoulli_logit_log_prob(std::span<const double> logits, std::span<const double> bits);
std::uint64_t bernoulli_clamp_count();

double diag_gaussian_log_prob(const DiagGaussianParams& g, std::span<const double> x);
double standard_normal_log_prob(std::span<const double> x);
double categorical_log_prob(std::span<const double> probs, std::size_t k);
double full_gaussian_log_prob(const FullGaussian& g, const Eigen::VectorXd& x);

/// log p(y) + log p(h) under the fixed prior of `spec` (uniform class prior).
double prior_log_prob(const LatentSpec& spec, const LatentValue& value);
std::vector<double> prior_log_prob(const LatentSpec& spec, const LatentBatch& batch);

// --- sampling -------------------------------------------------------------

std::vector<double> sample_bernoulli(std::span<const double> means, Rng& rng);
std::vector<double> sample_diag_gaussian(const DiagGaussianParams& g, Rng& rng);
std::size_t sample_categorical(std::span<const double> probs, Rng& rng);
std::vector<double> one_hot(std::size_t k, std::size_t classes);
Eigen::VectorXd sample_full_gaussian(const FullGaussian& g, Rng& rng);
LatentValue sample_prior(const LatentSpec& spec, Rng& rng);
LatentBatch sample_prior(const LatentSpec& spec, std::size_t rows, Rng& rng);

double standard_normal(Rng& rng);
double uniform01(Rng& rng);

// --- tape-connected densities (one value per row) -------------------------

Var bernoulli_logit_log_prob(Var logits, const Tensor& bits);
Var diag_gaussian_log_prob(Var mean, Var log_var, Var x);
Var categorical_logit_log_prob(Var logits, std::span<const std::size_t> labels);

/// mean + exp(log_var / 2) * eps with fresh standard-normal eps.
Var reparam_sample(Var mean, Var log_var, Rng& rng);
/// Same with caller-supplied eps (frozen noise).
Var reparam_sample(Var mean, Var log_var, const Tensor& eps);
/// Throws UnsupportedFactorError unless every factor is Gaussian.
void require_reparameterizable(const LatentSpec& spec);

// --- divergences and entropies --------------------------------------------

double kl_diag_gaussians(const DiagGaussianParams& a, const DiagGaussianParams& b);
double kl_full_gaussians(const FullGaussian& a, const FullGaussian& b);
double entropy_categorical(std::span<const double> probs);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);
double log_sum_exp(std::span<const double> values);

}  // namespace jsa
