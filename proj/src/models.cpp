#include "jsa/models.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <sstream>

namespace jsa {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Tensor obs_log_var_row(std::size_t dim, double noise_var) { return Tensor::filled({dim}, std::log(noise_var)); }

void check_obs(const Tensor& x, std::size_t dim, const LatentBatch& z) {
  if (x.rank() != 2 || x.cols() != dim) {
    throw ShapeError("observations " + shape_string(x.shape()) + " do not have " + std::to_string(dim) + " columns");
  }
  if (z.rows() != x.rows()) throw ShapeError("latent batch and observation batch differ in size");
}

// softplus(u) = -log_sigmoid(-u)
Var softplus(Var u) { return scale(log_sigmoid(scale(u, -1.0)), -1.0); }

Var sum_terms(Tape& tape, const std::vector<Var>& terms, std::size_t rows) {
  if (terms.empty()) return tape.constant(Tensor::zeros({rows}));
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generic contracts

Var GenerativeModel::log_likelihood_at(Tape&, const Tensor&, Var) {
  throw UnsupportedFactorError(architecture() + " does not accept tape-valued latents");
}

Var log_joint(Tape& tape, GenerativeModel& gen, const Tensor& x, const LatentBatch& z) {
  const LatentSpec& spec = gen.latent_spec();
  if (spec.has_classes() && z.labels.size() != z.rows()) {
    throw std::invalid_argument("log_joint: class-conditional model needs a label y for every row");
  }
  Var prior = tape.constant(Tensor::vector(prior_log_prob(spec, z)));
  return add(gen.log_likelihood(tape, x, z), prior);
}

std::vector<double> log_joint_values(GenerativeModel& gen, const Tensor& x, const LatentBatch& z) {
  Tape tape(false);
  return log_joint(tape, gen, x, z).value().values();
}

Tensor generate(GenerativeModel& gen, std::size_t count, Rng& rng) {
  LatentBatch z = sample_prior(gen.latent_spec(), count, rng);
  return gen.sample_observations(z, rng);
}

Var InferenceModel::class_logits(Tape&, const Tensor&) {
  throw std::logic_error(architecture() + " has no classifier head");
}

Proposal encoder_propose(InferenceModel& inf, const Tensor& x, const std::vector<std::size_t>* labels, Rng& rng) {
  return inf.propose(x, labels, rng);
}

// ---------------------------------------------------------------------------
// HeadedEncoder

Var HeadedEncoder::log_q(Tape& tape, const Tensor& x, const LatentBatch& z, bool include_label) {
  const LatentSpec& spec = latent_spec();
  EncoderHeads h = heads(tape, x);
  std::vector<Var> terms;
  if (spec.bernoulli_dim() > 0) terms.push_back(bernoulli_logit_log_prob(h.bernoulli_logits, z.bits));
  if (spec.gaussian_dim() > 0) {
    terms.push_back(diag_gaussian_log_prob(h.gauss_mean, h.gauss_log_var, tape.constant(z.reals)));
  }
  if (include_label) {
    if (!spec.has_classes()) throw std::logic_error("log_q: label requested on a model without classes");
    terms.push_back(categorical_logit_log_prob(h.class_logits, z.labels));
  }
  return sum_terms(tape, terms, x.rows());
}

std::vector<double> HeadedEncoder::widened_log_density(const EncoderHeads& h, const LatentBatch& z,
                                                       bool include_label) const {
  const LatentSpec& spec = latent_spec();
  const std::size_t rows = z.rows();
  const double noise_var = proposal_noise_ * proposal_noise_;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double lp = 0.0;
    if (spec.bernoulli_dim() > 0) lp += bernoulli_logit_log_prob(h.bernoulli_logits.value().row(r), z.bits.row(r));
    if (spec.gaussian_dim() > 0) {
      auto m = h.gauss_mean.value().row(r);
      auto lv = h.gauss_log_var.value().row(r);
      auto v = z.reals.row(r);
      for (std::size_t j = 0; j < m.size(); ++j) {
        const double var = std::exp(lv[j]) + noise_var;
        const double d = v[j] - m[j];
        lp += -0.5 * (kLog2Pi + std::log(var) + d * d / var);
      }
    }
    if (include_label) {
      auto logits = h.class_logits.value().row(r);
      std::vector<double> l(logits.begin(), logits.end());
      lp += logits[z.labels[r]] - log_sum_exp(l);
    }
    out[r] = lp;
  }
  return out;
}

Proposal HeadedEncoder::propose(const Tensor& x, const std::vector<std::size_t>* clamped_labels, Rng& rng) {
  const LatentSpec& spec = latent_spec();
  const std::size_t rows = x.rows();
  if (clamped_labels && clamped_labels->size() != rows) throw ShapeError("propose: one clamped label per row needed");
  Tape tape(false);
  EncoderHeads h = heads(tape, x);
  Proposal p;
  p.z = LatentBatch::empty(spec, rows);
  const double noise_var = proposal_noise_ * proposal_noise_;
  for (std::size_t r = 0; r < rows; ++r) {
    if (spec.bernoulli_dim() > 0) {
      auto logits = h.bernoulli_logits.value().row(r);
      auto bits = p.z.bits.row(r);
      for (std::size_t j = 0; j < logits.size(); ++j) {
        const double prob = 1.0 / (1.0 + std::exp(-logits[j]));
        bits[j] = uniform01(rng) < prob ? 1.0 : 0.0;
      }
    }
    if (spec.gaussian_dim() > 0) {
      auto m = h.gauss_mean.value().row(r);
      auto lv = h.gauss_log_var.value().row(r);
      auto v = p.z.reals.row(r);
      for (std::size_t j = 0; j < m.size(); ++j) v[j] = m[j] + std::sqrt(std::exp(lv[j]) + noise_var) * standard_normal(rng);
    }
    if (spec.has_classes()) {
      if (clamped_labels) {
        p.z.labels[r] = (*clamped_labels)[r];
      } else {
        auto logits = h.class_logits.value().row(r);
        std::vector<double> probs(logits.begin(), logits.end());
        const double lse = log_sum_exp(probs);
        for (double& q : probs) q = std::exp(q - lse);
        p.z.labels[r] = sample_categorical(probs, rng);
      }
    }
  }
  p.log_q = widened_log_density(h, p.z, spec.has_classes() && clamped_labels == nullptr);
  return p;
}

std::vector<double> HeadedEncoder::proposal_log_density(const Tensor& x, const LatentBatch& z, bool include_label) {
  Tape tape(false);
  return widened_log_density(heads(tape, x), z, include_label);
}

Var HeadedEncoder::class_logits(Tape& tape, const Tensor& x) {
  if (!latent_spec().has_classes()) throw std::logic_error(architecture() + " has no classifier head");
  return heads(tape, x).class_logits;
}

// ---------------------------------------------------------------------------
// Factor analysis

FAModel FAModel::reference() {
  FAModel fa;
  fa.mu << -1.0, 0.0, 1.0;
  fa.loading << 0.2, 1.0,  //
      1.0, 0.5,            //
      0.5, 0.5;
  fa.noise_var = 0.04;
  return fa;
}

Eigen::Matrix3d FAModel::marginal_cov() const {
  return loading * loading.transpose() + noise_var * Eigen::Matrix3d::Identity();
}

FullGaussian FAModel::marginal() const { return {mu, marginal_cov()}; }

double FAModel::log_marginal(const Eigen::Vector3d& x) const { return full_gaussian_log_prob(marginal(), x); }

Eigen::Vector3d FAModel::sample(Rng& rng) const {
  Eigen::Vector2d h(standard_normal(rng), standard_normal(rng));
  Eigen::Vector3d e(standard_normal(rng), standard_normal(rng), standard_normal(rng));
  return mu + loading * h + std::sqrt(noise_var) * e;
}

FullGaussian fa_exact_posterior(const FAModel& fa, const Eigen::Vector3d& x) {
  const Eigen::Matrix2d precision =
      fa.loading.transpose() * fa.loading / fa.noise_var + Eigen::Matrix2d::Identity();
  Eigen::FullPivLU<Eigen::Matrix2d> lu(precision);
  if (!lu.isInvertible()) throw NumericError("fa_exact_posterior: singular posterior precision");
  const Eigen::Matrix2d cov = lu.inverse();
  const Eigen::Vector2d mean = cov * fa.loading.transpose() * (x - fa.mu) / fa.noise_var;
  return {mean, cov};
}

double fa_marginal_kl(const FAModel& truth, const FAModel& estimate) {
  return kl_full_gaussians(truth.marginal(), estimate.marginal());
}

// ---------------------------------------------------------------------------
// LinearGaussianDecoder

LinearGaussianDecoder::LinearGaussianDecoder(LatentSpec spec, std::size_t obs_dim, double noise_var, Rng& rng)
    : spec_(std::move(spec)), obs_dim_(obs_dim), noise_var_(noise_var) {
  if (spec_.has_classes()) throw std::invalid_argument("LinearGaussianDecoder does not support class factors");
  if (!(noise_var > 0)) throw std::invalid_argument("observation noise variance must be positive");
  params_.add("bias", Tensor::zeros({obs_dim}));
  params_.add("loading", xavier_uniform(spec_.bernoulli_dim() + spec_.gaussian_dim(), obs_dim, rng));
}

Var LinearGaussianDecoder::log_likelihood_at(Tape& tape, const Tensor& x, Var latent) {
  Var mean = add(matmul(latent, tape.param(params_, "loading")), tape.param(params_, "bias"));
  Var lv = tape.constant(obs_log_var_row(obs_dim_, noise_var_));
  return diag_gaussian_log_prob(mean, broadcast(lv, x.rows()), tape.constant(x));
}

Var LinearGaussianDecoder::log_likelihood(Tape& tape, const Tensor& x, const LatentBatch& z) {
  check_obs(x, obs_dim_, z);
  return log_likelihood_at(tape, x, tape.constant(latent_features(spec_, z)));
}

Tensor LinearGaussianDecoder::sample_observations(const LatentBatch& z, Rng& rng) {
  Tape tape(false);
  Var feats = tape.constant(latent_features(spec_, z));
  Tensor mean = add(matmul(feats, tape.param(params_, "loading")), tape.param(params_, "bias")).value();
  const double sd = std::sqrt(noise_var_);
  for (double& v : mean.data()) v += sd * standard_normal(rng);
  return mean;
}

std::string LinearGaussianDecoder::architecture() const {
  std::ostringstream os;
  os.precision(17);
  os << "linear_gaussian_decoder obs=" << obs_dim_ << " noise_var=" << noise_var_;
  return os.str();
}

void LinearGaussianDecoder::set_from_fa(const FAModel& fa) {
  if (obs_dim_ != 3 || spec_.gaussian_dim() != 2 || spec_.bernoulli_dim() != 0) {
    throw std::logic_error("set_from_fa needs a 2-d Gaussian latent and 3-d observations");
  }
  Parameter& b = params_.at("bias");
  Parameter& w = params_.at("loading");
  for (int i = 0; i < 3; ++i) b.value[i] = fa.mu[i];
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) w.value.at(j, i) = fa.loading(i, j);
}

FAModel LinearGaussianDecoder::to_fa() const {
  if (obs_dim_ != 3 || spec_.gaussian_dim() != 2 || spec_.bernoulli_dim() != 0) {
    throw std::logic_error("to_fa needs a 2-d Gaussian latent and 3-d observations");
  }
  FAModel fa;
  const Parameter& b = params_.at("bias");
  const Parameter& w = params_.at("loading");
  for (int i = 0; i < 3; ++i) fa.mu[i] = b.value[i];
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) fa.loading(i, j) = w.value.at(j, i);
  fa.noise_var = noise_var_;
  return fa;
}

// ---------------------------------------------------------------------------
// MLP pair

Tensor latent_features(const LatentSpec& spec, const LatentBatch& z) {
  const std::size_t rows = z.rows();
  const std::size_t nb = spec.bernoulli_dim();
  const std::size_t ng = spec.gaussian_dim();
  const std::size_t k = spec.num_classes();
  Tensor f = Tensor::zeros({rows, nb + ng + k});
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = f.row(r);
    std::copy_n(z.bits.row(r).begin(), nb, dst.begin());
    std::copy_n(z.reals.row(r).begin(), ng, dst.begin() + nb);
    if (k > 0) dst[nb + ng + z.labels.at(r)] = 1.0;
  }
  return f;
}

MlpDecoder::MlpDecoder(LatentSpec spec, std::size_t obs_dim, std::vector<std::size_t> hidden, ObservationModel obs,
                       Rng& rng)
    : spec_(std::move(spec)), obs_dim_(obs_dim), obs_(obs) {
  std::vector<std::size_t> widths{spec_.total_dim()};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(obs == ObservationModel::diag_gaussian ? 2 * obs_dim : obs_dim);
  net_ = Mlp(params_, "dec", widths, Activation::relu, rng);
}

Var MlpDecoder::log_likelihood_features(Tape& tape, const Tensor& x, Var features) {
  Var out = net_(tape, params_, features);
  if (obs_ == ObservationModel::bernoulli_pixel) return bernoulli_logit_log_prob(out, x);
  Var mean = slice(out, 0, obs_dim_);
  Var raw = slice(out, obs_dim_, 2 * obs_dim_);
  Var floor = tape.constant(Tensor::filled({obs_dim_}, min_log_var_));
  Var lv = add(softplus(sub(raw, floor)), floor);
  return diag_gaussian_log_prob(mean, lv, tape.constant(x));
}

Var MlpDecoder::log_likelihood(Tape& tape, const Tensor& x, const LatentBatch& z) {
  check_obs(x, obs_dim_, z);
  return log_likelihood_features(tape, x, tape.constant(latent_features(spec_, z)));
}

Var MlpDecoder::log_likelihood_at(Tape& tape, const Tensor& x, Var latent) {
  require_reparameterizable(spec_);
  return log_likelihood_features(tape, x, latent);
}

Tensor MlpDecoder::sample_observations(const LatentBatch& z, Rng& rng) {
  Tape tape(false);
  Tensor out = net_(tape, params_, tape.constant(latent_features(spec_, z))).value();
  Tensor x = Tensor::zeros({z.rows(), obs_dim_});
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto o = out.row(r);
    auto dst = x.row(r);
    for (std::size_t j = 0; j < obs_dim_; ++j) {
      if (obs_ == ObservationModel::bernoulli_pixel) {
        dst[j] = uniform01(rng) < 1.0 / (1.0 + std::exp(-o[j])) ? 1.0 : 0.0;
      } else {
        const double raw = o[obs_dim_ + j] - min_log_var_;
        const double sp = raw > 30 ? raw : std::log1p(std::exp(raw));
        dst[j] = o[j] + std::exp(0.5 * (sp + min_log_var_)) * standard_normal(rng);
      }
    }
  }
  return x;
}

std::string MlpDecoder::architecture() const {
  return "mlp_decoder " + net_.describe() +
         (obs_ == ObservationModel::diag_gaussian ? " obs=diag_gaussian" : " obs=bernoulli_pixel");
}

MlpEncoder::MlpEncoder(LatentSpec spec, std::size_t obs_dim, std::vector<std::size_t> hidden, Rng& rng)
    : spec_(std::move(spec)), obs_dim_(obs_dim) {
  std::vector<std::size_t> widths{obs_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(spec_.bernoulli_dim() + 2 * spec_.gaussian_dim() + spec_.num_classes());
  net_ = Mlp(params_, "enc", widths, Activation::relu, rng);
}

EncoderHeads MlpEncoder::heads(Tape& tape, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != obs_dim_) {
    throw ShapeError("encoder input " + shape_string(x.shape()) + " does not have " + std::to_string(obs_dim_) +
                     " columns");
  }
  Var out = net_(tape, params_, tape.constant(x));
  const std::size_t nb = spec_.bernoulli_dim();
  const std::size_t ng = spec_.gaussian_dim();
  const std::size_t k = spec_.num_classes();
  EncoderHeads h;
  if (nb > 0) h.bernoulli_logits = slice(out, 0, nb);
  if (ng > 0) {
    h.gauss_mean = slice(out, nb, nb + ng);
    h.gauss_log_var = slice(out, nb + ng, nb + 2 * ng);
  }
  if (k > 0) h.class_logits = slice(out, nb + 2 * ng, nb + 2 * ng + k);
  return h;
}

std::string MlpEncoder::architecture() const { return "mlp_encoder " + net_.describe(); }

// ---------------------------------------------------------------------------
// Sequence pair

Tensor one_hot_column(const Tensor& tokens, long t, std::size_t vocab) {
  Tensor out = Tensor::zeros({tokens.rows(), vocab});
  if (t < 0) return out;
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    const auto k = static_cast<std::size_t>(tokens.at(r, static_cast<std::size_t>(t)));
    if (k >= vocab) throw ShapeError("token index out of vocabulary");
    out.at(r, k) = 1.0;
  }
  return out;
}

SeqDecoder::SeqDecoder(LatentSpec spec, SequenceShape shape, std::size_t width1, std::size_t width2, Rng& rng)
    : spec_(std::move(spec)), shape_(shape) {
  if (spec_.has_classes()) throw std::invalid_argument("SeqDecoder does not support class factors");
  const std::size_t latent = spec_.bernoulli_dim() + spec_.gaussian_dim();
  layer1_ = LstmCell(params_, "dec.lstm1", shape_.vocab + latent, width1, rng);
  layer2_ = LstmCell(params_, "dec.lstm2", width1, width2, rng);
  out_ = Dense(params_, "dec.out", width2, shape_.vocab, rng);
}

std::vector<Var> SeqDecoder::step_log_probs(Tape& tape, const Tensor& x, const LatentBatch& z) {
  check_obs(x, shape_.length, z);
  const std::size_t rows = x.rows();
  Var latent = tape.constant(latent_features(spec_, z));
  LstmState s1 = layer1_.zero_state(tape, rows);
  LstmState s2 = layer2_.zero_state(tape, rows);
  std::vector<Var> steps;
  std::vector<std::size_t> target(rows);
  for (std::size_t t = 0; t < shape_.length; ++t) {
    Var prev = tape.constant(one_hot_column(x, static_cast<long>(t) - 1, shape_.vocab));
    s1 = lstm_step(tape, params_, layer1_, concat({prev, latent}), s1);
    s2 = lstm_step(tape, params_, layer2_, s1.h, s2);
    Var logp = log_softmax(out_(tape, params_, s2.h));
    for (std::size_t r = 0; r < rows; ++r) target[r] = static_cast<std::size_t>(x.at(r, t));
    steps.push_back(pick(logp, target));
  }
  return steps;
}

Var SeqDecoder::log_likelihood(Tape& tape, const Tensor& x, const LatentBatch& z) {
  auto steps = step_log_probs(tape, x, z);
  return sum_terms(tape, steps, x.rows());
}

Tensor SeqDecoder::sample_observations(const LatentBatch& z, Rng& rng) {
  const std::size_t rows = z.rows();
  Tape tape(false);
  Var latent = tape.constant(latent_features(spec_, z));
  LstmState s1 = layer1_.zero_state(tape, rows);
  LstmState s2 = layer2_.zero_state(tape, rows);
  Tensor x = Tensor::zeros({rows, shape_.length});
  Tensor prev = Tensor::zeros({rows, shape_.vocab});
  for (std::size_t t = 0; t < shape_.length; ++t) {
    s1 = lstm_step(tape, params_, layer1_, concat({tape.constant(prev), latent}), s1);
    s2 = lstm_step(tape, params_, layer2_, s1.h, s2);
    const Tensor& p = softmax(out_(tape, params_, s2.h)).value();
    prev = Tensor::zeros({rows, shape_.vocab});
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t k = sample_categorical(p.row(r), rng);
      x.at(r, t) = static_cast<double>(k);
      prev.at(r, k) = 1.0;
    }
  }
  return x;
}

std::string SeqDecoder::architecture() const {
  return "seq_decoder lstm=" + std::to_string(layer1_.hidden()) + "-" + std::to_string(layer2_.hidden()) +
         " vocab=" + std::to_string(shape_.vocab) + " length=" + std::to_string(shape_.length);
}

SeqEncoder::SeqEncoder(LatentSpec spec, SequenceShape shape, std::size_t width1, std::size_t width2, Rng& rng)
    : spec_(std::move(spec)), shape_(shape) {
  if (spec_.gaussian_dim() > 0 || spec_.has_classes()) {
    throw std::invalid_argument("SeqEncoder supports Bernoulli latents only");
  }
  layer1_ = LstmCell(params_, "enc.lstm1", shape_.vocab, width1, rng);
  layer2_ = LstmCell(params_, "enc.lstm2", width1, width2, rng);
  out_ = Dense(params_, "enc.out", width2, spec_.bernoulli_dim(), rng);
}

EncoderHeads SeqEncoder::heads(Tape& tape, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != shape_.length) throw ShapeError("SeqEncoder: bad sequence batch shape");
  const std::size_t rows = x.rows();
  LstmState s1 = layer1_.zero_state(tape, rows);
  LstmState s2 = layer2_.zero_state(tape, rows);
  for (std::size_t t = 0; t < shape_.length; ++t) {
    s1 = lstm_step(tape, params_, layer1_, tape.constant(one_hot_column(x, static_cast<long>(t), shape_.vocab)), s1);
    s2 = lstm_step(tape, params_, layer2_, s1.h, s2);
  }
  EncoderHeads h;
  h.bernoulli_logits = out_(tape, params_, s2.h);
  return h;
}

std::string SeqEncoder::architecture() const {
  return "seq_encoder lstm=" + std::to_string(layer1_.hidden()) + "-" + std::to_string(layer2_.hidden()) +
         " vocab=" + std::to_string(shape_.vocab) + " length=" + std::to_string(shape_.length);
}

// ---------------------------------------------------------------------------
// Exact proposals

FAPosteriorProposal::FAPosteriorProposal(FAModel fa) : fa_(std::move(fa)), spec_(LatentSpec::gaussian(2)) {}

std::vector<double> FAPosteriorProposal::proposal_log_density(const Tensor& x, const LatentBatch& z, bool) {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Eigen::Vector3d xr(x.at(r, 0), x.at(r, 1), x.at(r, 2));
    const Eigen::Vector2d h(z.reals.at(r, 0), z.reals.at(r, 1));
    out[r] = full_gaussian_log_prob(fa_exact_posterior(fa_, xr), h);
  }
  return out;
}

Var FAPosteriorProposal::log_q(Tape& tape, const Tensor& x, const LatentBatch& z, bool include_label) {
  return tape.constant(Tensor::vector(proposal_log_density(x, z, include_label)));
}

Proposal FAPosteriorProposal::propose(const Tensor& x, const std::vector<std::size_t>*, Rng& rng) {
  Proposal p;
  p.z = LatentBatch::empty(spec_, x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Eigen::Vector3d xr(x.at(r, 0), x.at(r, 1), x.at(r, 2));
    const Eigen::VectorXd h = sample_full_gaussian(fa_exact_posterior(fa_, xr), rng);
    p.z.reals.at(r, 0) = h[0];
    p.z.reals.at(r, 1) = h[1];
  }
  p.log_q = proposal_log_density(x, p.z, false);
  return p;
}

std::size_t bits_to_index(std::span<const double> bits) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i] != 0.0) idx |= std::size_t{1} << i;
  return idx;
}

std::vector<double> index_to_bits(std::size_t index, std::size_t dim) {
  std::vector<double> bits(dim);
  for (std::size_t i = 0; i < dim; ++i) bits[i] = (index >> i) & 1U ? 1.0 : 0.0;
  return bits;
}

std::vector<double> enumerate_bernoulli_posterior(GenerativeModel& gen, std::span<const double> x) {
  const LatentSpec& spec = gen.latent_spec();
  if (spec.gaussian_dim() > 0 || spec.has_classes() || spec.bernoulli_dim() > 16) {
    throw std::invalid_argument("enumeration needs a Bernoulli latent of dimension <= 16");
  }
  const std::size_t d = spec.bernoulli_dim();
  const std::size_t states = std::size_t{1} << d;
  LatentBatch z = LatentBatch::empty(spec, states);
  for (std::size_t s = 0; s < states; ++s) {
    auto bits = index_to_bits(s, d);
    std::copy(bits.begin(), bits.end(), z.bits.row(s).begin());
  }
  Tensor xs = repeat_rows(Tensor::matrix(1, x.size(), std::vector<double>(x.begin(), x.end())), states);
  std::vector<double> lj = log_joint_values(gen, xs, z);
  const double lse = log_sum_exp(lj);
  for (double& v : lj) v = std::exp(v - lse);
  return lj;
}

EnumeratedPosteriorProposal::EnumeratedPosteriorProposal(GenerativeModel& gen) : gen_(gen) {
  const LatentSpec& spec = gen.latent_spec();
  if (spec.gaussian_dim() > 0 || spec.has_classes()) {
    throw std::invalid_argument("EnumeratedPosteriorProposal needs a pure Bernoulli latent");
  }
}

std::vector<double> EnumeratedPosteriorProposal::proposal_log_density(const Tensor& x, const LatentBatch& z, bool) {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto post = enumerate_bernoulli_posterior(gen_, x.row(r));
    out[r] = std::log(post[bits_to_index(z.bits.row(r))]);
  }
  return out;
}

Var EnumeratedPosteriorProposal::log_q(Tape& tape, const Tensor& x, const LatentBatch& z, bool include_label) {
  return tape.constant(Tensor::vector(proposal_log_density(x, z, include_label)));
}

Proposal EnumeratedPosteriorProposal::propose(const Tensor& x, const std::vector<std::size_t>*, Rng& rng) {
  const std::size_t d = gen_.latent_spec().bernoulli_dim();
  Proposal p;
  p.z = LatentBatch::empty(gen_.latent_spec(), x.rows());
  p.log_q.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto post = enumerate_bernoulli_posterior(gen_, x.row(r));
    const std::size_t s = sample_categorical(post, rng);
    auto bits = index_to_bits(s, d);
    std::copy(bits.begin(), bits.end(), p.z.bits.row(r).begin());
    p.log_q[r] = std::log(post[s]);
  }
  return p;
}

}  // namespace jsa
