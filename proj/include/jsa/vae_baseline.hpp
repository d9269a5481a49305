#pragma once

#include "jsa/jsa_trainer.hpp"
#include "jsa/models.hpp"
#include "jsa/sa_mis.hpp"

#include <cstdint>

namespace jsa {

/// Monte-Carlo ELBO, mean over rows of x and over `samples` draws of
/// log p_θ(x, h) − log q_φ(h | x). Requires an all-Gaussian latent.
double elbo(const Tensor& x, GenerativeModel& gen, InferenceModel& inf, Rng& rng, std::size_t samples);

/// Pathwise gradients of the single-sample ELBO (mean over rows) into both
/// stores. The encoder must expose Gaussian heads.
void elbo_gradients(const Tensor& x, GenerativeModel& gen, InferenceModel& inf, Rng& rng);
/// As above with the standard-normal noise ε supplied ([B, latent dim]).
void elbo_gradients(const Tensor& x, GenerativeModel& gen, InferenceModel& inf, const Tensor& eps);
/// Single-sample ELBO objective on a tape, for a fixed ε.
Var elbo_objective(Tape& tape, const Tensor& x, GenerativeModel& gen, InferenceModel& inf, const Tensor& eps);

struct VaeConfig {
  SAConfig sa;
  std::size_t batch_size = 0;  // 0 = full batch
  std::size_t eval_samples = 1;
};

class VaeTrainer : public IterativeTrainer {
 public:
  VaeTrainer(GenerativeModel& gen, InferenceModel& inf, Tensor data, VaeConfig config, std::uint64_t seed);

  void step(std::uint64_t t) override;
  void fill_metrics(MetricsRow& row, std::uint64_t t) override;
  Rng& rng() { return rng_; }
  Rng& eval_rng() { return eval_rng_; }

 private:
  GenerativeModel& gen_;
  InferenceModel& inf_;
  Tensor data_;
  VaeConfig config_;
  std::uint64_t seed_;
  Rng rng_;
  Rng eval_rng_;
};

}  // namespace jsa
