#include "jsa/vae_baseline.hpp"

#include <algorithm>

namespace jsa {

namespace {

HeadedEncoder& gaussian_encoder(InferenceModel& inf) {
  auto* enc = dynamic_cast<HeadedEncoder*>(&inf);
  if (!enc) throw UnsupportedFactorError(inf.architecture() + " does not expose Gaussian heads");
  return *enc;
}

}  // namespace

double elbo(const Tensor& x, GenerativeModel& gen, InferenceModel& inf, Rng& rng, std::size_t samples) {
  require_reparameterizable(gen.latent_spec());
  if (samples < 1 || x.rows() == 0) throw std::invalid_argument("elbo: needs samples >= 1 and a non-empty batch");
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    Proposal p = inf.propose(x, nullptr, rng);
    const auto lj = log_joint_values(gen, x, p.z);
    for (std::size_t r = 0; r < lj.size(); ++r) total += lj[r] - p.log_q[r];
  }
  return total / static_cast<double>(samples * x.rows());
}

Var elbo_objective(Tape& tape, const Tensor& x, GenerativeModel& gen, InferenceModel& inf, const Tensor& eps) {
  const LatentSpec& spec = gen.latent_spec();
  require_reparameterizable(spec);
  EncoderHeads heads = gaussian_encoder(inf).heads(tape, x);
  Var h = reparam_sample(heads.gauss_mean, heads.gauss_log_var, eps);
  const Shape shape{x.rows(), spec.gaussian_dim()};
  Var log_prior = diag_gaussian_log_prob(tape.constant(Tensor::zeros(shape)), tape.constant(Tensor::zeros(shape)), h);
  Var log_q = diag_gaussian_log_prob(heads.gauss_mean, heads.gauss_log_var, h);
  return mean(sub(add(log_prior, gen.log_likelihood_at(tape, x, h)), log_q));
}

void elbo_gradients(const Tensor& x, GenerativeModel& gen, InferenceModel& inf, const Tensor& eps) {
  gen.params().zero_grad();
  inf.params().zero_grad();
  Tape tape;
  tape.backward(elbo_objective(tape, x, gen, inf, eps));
}

void elbo_gradients(const Tensor& x, GenerativeModel& gen, InferenceModel& inf, Rng& rng) {
  require_reparameterizable(gen.latent_spec());
  Tensor eps = Tensor::zeros({x.rows(), gen.latent_spec().gaussian_dim()});
  for (double& e : eps.data()) e = standard_normal(rng);
  elbo_gradients(x, gen, inf, eps);
}

VaeTrainer::VaeTrainer(GenerativeModel& gen, InferenceModel& inf, Tensor data, VaeConfig config, std::uint64_t seed)
    : gen_(gen), inf_(inf), data_(std::move(data)), config_(std::move(config)), seed_(seed), rng_(seed),
      eval_rng_(seed ^ 0xa5a5a5a5ULL) {
  config_.sa.validate();
  require_reparameterizable(gen.latent_spec());
  gaussian_encoder(inf);
  if (data_.rows() == 0) throw std::invalid_argument("VaeTrainer: empty training set");
  inf_.set_proposal_noise_std(0.0);
}

void VaeTrainer::step(std::uint64_t t) {
  const auto idx = minibatch_indices(data_.rows(), config_.batch_size, t, seed_);
  elbo_gradients(take_rows(data_, idx), gen_, inf_, rng_);
  if (!gen_.params().grads_finite() || !inf_.params().grads_finite()) {
    throw NumericError("non-finite ELBO gradient at iteration " + std::to_string(t));
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

void VaeTrainer::fill_metrics(MetricsRow& row, std::uint64_t t) {
  row.set("gamma", lr_schedule(config_.sa, std::max<std::uint64_t>(t, 1)));
  row.set("elbo", elbo(data_, gen_, inf_, eval_rng_, config_.eval_samples));
}

}  // namespace jsa
