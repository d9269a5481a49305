#include "jsa/distributions.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>

namespace jsa {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)
constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

std::atomic<std::uint64_t> g_clamp_count{0};

const char* kind_name(FactorKind k) {
  switch (k) {
    case FactorKind::bernoulli: return "bernoulli";
    case FactorKind::gaussian: return "gaussian";
    case FactorKind::categorical: return "categorical";
  }
  return "?";
}

}  // namespace

// ---------------------------------------------------------------------------
// LatentSpec

LatentSpec::LatentSpec(std::vector<LatentFactor> factors) : factors_(std::move(factors)) {
  for (const auto& f : factors_) {
    if (f.dim == 0) throw std::invalid_argument("latent factor with zero dimension");
    switch (f.kind) {
      case FactorKind::bernoulli:
        if (!(f.prior_mean > 0.0 && f.prior_mean < 1.0)) {
          throw std::invalid_argument("Bernoulli prior mean must lie in (0,1)");
        }
        bernoulli_dim_ += f.dim;
        break;
      case FactorKind::gaussian: gaussian_dim_ += f.dim; break;
      case FactorKind::categorical:
        if (num_classes_ > 0) throw std::invalid_argument("at most one categorical factor is allowed");
        if (f.dim < 2) throw std::invalid_argument("categorical factor needs at least two classes");
        num_classes_ = f.dim;
        break;
    }
  }
}

LatentSpec LatentSpec::bernoulli(std::size_t dim, double prior_mean) {
  return LatentSpec({{FactorKind::bernoulli, dim, prior_mean}});
}

LatentSpec LatentSpec::gaussian(std::size_t dim) { return LatentSpec({{FactorKind::gaussian, dim, 0.5}}); }

LatentSpec LatentSpec::with_classes(std::size_t k) const {
  auto f = without_classes().factors_;
  f.push_back({FactorKind::categorical, k, 0.5});
  return LatentSpec(std::move(f));
}

LatentSpec LatentSpec::without_classes() const {
  std::vector<LatentFactor> f;
  for (const auto& x : factors_)
    if (x.kind != FactorKind::categorical) f.push_back(x);
  return LatentSpec(std::move(f));
}

std::string LatentSpec::to_string() const {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    const auto& f = factors_[i];
    os << (i ? "," : "") << kind_name(f.kind) << ':' << f.dim;
    if (f.kind == FactorKind::bernoulli) os << ':' << f.prior_mean;
  }
  return os.str();
}

LatentSpec LatentSpec::parse(const std::string& text) {
  std::vector<LatentFactor> factors;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    std::istringstream fs(item);
    std::string kind, dim, mean;
    std::getline(fs, kind, ':');
    std::getline(fs, dim, ':');
    std::getline(fs, mean, ':');
    LatentFactor f;
    if (kind == "bernoulli") f.kind = FactorKind::bernoulli;
    else if (kind == "gaussian") f.kind = FactorKind::gaussian;
    else if (kind == "categorical") f.kind = FactorKind::categorical;
    else throw std::invalid_argument("unknown latent factor kind '" + kind + "'");
    try {
      f.dim = std::stoul(dim);
      if (!mean.empty()) f.prior_mean = std::stod(mean);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("malformed latent factor '" + item + "'");
    }
    factors.push_back(f);
  }
  return LatentSpec(std::move(factors));
}

// ---------------------------------------------------------------------------
// LatentValue / LatentBatch

std::vector<double> LatentValue::serialize() const {
  std::vector<double> out(bits);
  out.insert(out.end(), reals.begin(), reals.end());
  if (label) out.push_back(static_cast<double>(*label));
  return out;
}

LatentValue LatentValue::deserialize(const LatentSpec& spec, std::span<const double> flat) {
  const std::size_t nb = spec.bernoulli_dim();
  const std::size_t ng = spec.gaussian_dim();
  const std::size_t expected = nb + ng + (spec.has_classes() ? 1 : 0);
  if (flat.size() != expected) throw std::invalid_argument("serialized latent has the wrong length");
  LatentValue v;
  v.bits.assign(flat.begin(), flat.begin() + nb);
  v.reals.assign(flat.begin() + nb, flat.begin() + nb + ng);
  if (spec.has_classes()) v.label = static_cast<std::size_t>(flat[nb + ng]);
  v.validate(spec);
  return v;
}

void LatentValue::validate(const LatentSpec& spec) const {
  if (bits.size() != spec.bernoulli_dim() || reals.size() != spec.gaussian_dim()) {
    throw std::invalid_argument("latent value arity does not match its spec");
  }
  for (double b : bits)
    if (b != 0.0 && b != 1.0) throw std::invalid_argument("Bernoulli latent entries must be exactly 0 or 1");
  if (spec.has_classes() != label.has_value()) throw std::invalid_argument("latent label presence mismatch");
  if (label && *label >= spec.num_classes()) throw std::invalid_argument("latent label out of range");
}

LatentBatch LatentBatch::empty(const LatentSpec& spec, std::size_t rows) {
  LatentBatch b;
  b.bits = Tensor::zeros({rows, spec.bernoulli_dim()});
  b.reals = Tensor::zeros({rows, spec.gaussian_dim()});
  if (spec.has_classes()) b.labels.assign(rows, 0);
  return b;
}

LatentValue LatentBatch::row(std::size_t r) const {
  LatentValue v;
  auto b = bits.row(r);
  auto g = reals.row(r);
  v.bits.assign(b.begin(), b.end());
  v.reals.assign(g.begin(), g.end());
  if (!labels.empty()) v.label = labels[r];
  return v;
}

void LatentBatch::set_row(std::size_t r, const LatentValue& v) {
  std::copy(v.bits.begin(), v.bits.end(), bits.row(r).begin());
  std::copy(v.reals.begin(), v.reals.end(), reals.row(r).begin());
  if (!labels.empty()) labels[r] = v.label.value_or(0);
}

LatentBatch LatentBatch::take(std::span<const std::size_t> rows) const {
  LatentBatch out;
  out.bits = take_rows(bits, rows);
  out.reals = take_rows(reals, rows);
  if (!labels.empty())
    for (std::size_t r : rows) out.labels.push_back(labels[r]);
  return out;
}

LatentBatch concat_batches(std::span<const LatentBatch> parts) {
  std::vector<Tensor> bits, reals;
  LatentBatch out;
  for (const auto& p : parts) {
    bits.push_back(p.bits);
    reals.push_back(p.reals);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.bits = vstack(bits);
  out.reals = vstack(reals);
  return out;
}

void DiagGaussianParams::validate() const {
  if (mean.size() != log_var.size()) throw std::invalid_argument("Gaussian mean/log-variance size mismatch");
  for (double lv : log_var) {
    const double v = std::exp(lv);
    if (!(std::isfinite(v) && v > 0.0)) throw std::invalid_argument("Gaussian variance must be positive and finite");
  }
}

double FullGaussian::correlation(std::size_t i, std::size_t j) const {
  return cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
}

// ---------------------------------------------------------------------------
// log-densities

double bernoulli_log_prob(std::span<const double> means, std::span<const double> bits) {
  if (means.size() != bits.size()) throw std::invalid_argument("bernoulli_log_prob: size mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    double m = means[i];
    if (m < kClampLo || m > kClampHi) {
      g_clamp_count.fetch_add(1, std::memory_order_relaxed);
      m = std::clamp(m, kClampLo, kClampHi);
    }
    lp += bits[i] != 0.0 ? std::log(m) : std::log1p(-m);
  }
  return lp;
}

std::uint64_t bernoulli_clamp_count() { return g_clamp_count.load(std::memory_order_relaxed); }

double bernoulli_logit_log_prob(std::span<const double> logits, std::span<const double> bits) {
  if (logits.size() != bits.size()) throw std::invalid_argument("bernoulli_logit_log_prob: size mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    // log sigmoid(s*l) with s = +1 for a one bit, -1 for a zero bit
    const double z = bits[i] != 0.0 ? logits[i] : -logits[i];
    lp += z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  }
  return lp;
}

double diag_gaussian_log_prob(const DiagGaussianParams& g, std::span<const double> x) {
  g.validate();
  if (x.size() != g.mean.size()) throw std::invalid_argument("diag_gaussian_log_prob: size mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - g.mean[i];
    lp += -0.5 * (kLog2Pi + g.log_var[i] + d * d * std::exp(-g.log_var[i]));
  }
  return lp;
}

double standard_normal_log_prob(std::span<const double> x) {
  double lp = 0.0;
  for (double v : x) lp += -0.5 * (kLog2Pi + v * v);
  return lp;
}

double categorical_log_prob(std::span<const double> probs, std::size_t k) {
  if (k >= probs.size()) throw std::invalid_argument("categorical_log_prob: class out of range");
  return std::log(probs[k]);
}

double full_gaussian_log_prob(const FullGaussian& g, const Eigen::VectorXd& x) {
  Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
  if (llt.info() != Eigen::Success) throw NumericError("covariance is not positive definite");
  const Eigen::VectorXd d = x - g.mean;
  const Eigen::VectorXd sol = llt.matrixL().solve(d);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(d.size()) * kLog2Pi + logdet + sol.squaredNorm());
}

double prior_log_prob(const LatentSpec& spec, const LatentValue& value) {
  value.validate(spec);
  double lp = 0.0;
  std::size_t off = 0;
  for (const auto& f : spec.factors()) {
    if (f.kind != FactorKind::bernoulli) continue;
    for (std::size_t i = 0; i < f.dim; ++i) {
      lp += value.bits[off + i] != 0.0 ? std::log(f.prior_mean) : std::log1p(-f.prior_mean);
    }
    off += f.dim;
  }
  lp += standard_normal_log_prob(value.reals);
  if (spec.has_classes()) lp -= std::log(static_cast<double>(spec.num_classes()));
  return lp;
}

std::vector<double> prior_log_prob(const LatentSpec& spec, const LatentBatch& batch) {
  std::vector<double> out(batch.rows());
  for (std::size_t r = 0; r < batch.rows(); ++r) out[r] = prior_log_prob(spec, batch.row(r));
  return out;
}

// ---------------------------------------------------------------------------
// sampling

double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::vector<double> sample_bernoulli(std::span<const double> means, Rng& rng) {
  std::vector<double> out(means.size());
  for (std::size_t i = 0; i < means.size(); ++i) out[i] = uniform01(rng) < means[i] ? 1.0 : 0.0;
  return out;
}

std::vector<double> sample_diag_gaussian(const DiagGaussianParams& g, Rng& rng) {
  g.validate();
  std::vector<double> out(g.mean.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.mean[i] + std::exp(0.5 * g.log_var[i]) * standard_normal(rng);
  return out;
}

std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

std::vector<double> one_hot(std::size_t k, std::size_t classes) {
  std::vector<double> v(classes, 0.0);
  v.at(k) = 1.0;
  return v;
}

Eigen::VectorXd sample_full_gaussian(const FullGaussian& g, Rng& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
  if (llt.info() != Eigen::Success) throw NumericError("covariance is not positive definite");
  Eigen::VectorXd eps(g.mean.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = standard_normal(rng);
  return g.mean + llt.matrixL() * eps;
}

LatentValue sample_prior(const LatentSpec& spec, Rng& rng) {
  LatentValue v;
  for (const auto& f : spec.factors()) {
    switch (f.kind) {
      case FactorKind::bernoulli:
        for (std::size_t i = 0; i < f.dim; ++i) v.bits.push_back(uniform01(rng) < f.prior_mean ? 1.0 : 0.0);
        break;
      case FactorKind::gaussian:
        for (std::size_t i = 0; i < f.dim; ++i) v.reals.push_back(standard_normal(rng));
        break;
      case FactorKind::categorical:
        v.label = std::uniform_int_distribution<std::size_t>(0, f.dim - 1)(rng);
        break;
    }
  }
  return v;
}

LatentBatch sample_prior(const LatentSpec& spec, std::size_t rows, Rng& rng) {
  LatentBatch b = LatentBatch::empty(spec, rows);
  for (std::size_t r = 0; r < rows; ++r) b.set_row(r, sample_prior(spec, rng));
  return b;
}

// ---------------------------------------------------------------------------
// tape-connected densities

Var bernoulli_logit_log_prob(Var logits, const Tensor& bits) {
  if (logits.shape() != bits.shape()) {
    throw ShapeError("bernoulli_logit_log_prob: logits " + shape_string(logits.shape()) + " vs bits " +
                     shape_string(bits.shape()));
  }
  // log p(b | l) = log sigmoid(s * l), s = 2b - 1
  Tensor signs(bits.shape(), std::vector<double>(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i) signs[i] = bits[i] != 0.0 ? 1.0 : -1.0;
  Tape& t = logits.tape();
  return row_sum(log_sigmoid(mul(logits, t.constant(std::move(signs)))));
}

Var diag_gaussian_log_prob(Var mean, Var log_var, Var x) {
  Tape& t = mean.tape();
  const std::size_t d = mean.value().cols();
  // -0.5 * sum(log 2pi + log_var + (x - mean)^2 * exp(-log_var))
  Var diff = sub(x, mean);
  Var quad = mul(square(diff), exp(scale(log_var, -1.0)));
  Var per_row = row_sum(add(quad, log_var));
  Var c = t.constant(Tensor::filled(per_row.shape(), static_cast<double>(d) * kLog2Pi));
  return scale(add(per_row, c), -0.5);
}

Var categorical_logit_log_prob(Var logits, std::span<const std::size_t> labels) {
  return pick(log_softmax(logits), labels);
}

Var reparam_sample(Var mean, Var log_var, const Tensor& eps) {
  if (eps.shape() != mean.shape()) throw ShapeError("reparam_sample: noise shape mismatch");
  Tape& t = mean.tape();
  return add(mean, mul(exp(scale(log_var, 0.5)), t.constant(eps)));
}

Var reparam_sample(Var mean, Var log_var, Rng& rng) {
  Tensor eps = Tensor::zeros(mean.shape());
  for (double& e : eps.data()) e = standard_normal(rng);
  return reparam_sample(mean, log_var, eps);
}

void require_reparameterizable(const LatentSpec& spec) {
  for (const auto& f : spec.factors()) {
    if (f.kind != FactorKind::gaussian) {
      throw UnsupportedFactorError(std::string("reparameterized sampling needs Gaussian factors, found ") +
                                   kind_name(f.kind));
    }
  }
}

// ---------------------------------------------------------------------------
// divergences

double kl_diag_gaussians(const DiagGaussianParams& a, const DiagGaussianParams& b) {
  a.validate();
  b.validate();
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("kl_diag_gaussians: dimension mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < a.mean.size(); ++i) {
    const double d = a.mean[i] - b.mean[i];
    kl += 0.5 * (b.log_var[i] - a.log_var[i] + (std::exp(a.log_var[i]) + d * d) * std::exp(-b.log_var[i]) - 1.0);
  }
  return std::max(kl, 0.0);
}

double kl_full_gaussians(const FullGaussian& a, const FullGaussian& b) {
  const auto n = a.mean.size();
  if (b.mean.size() != n) throw std::invalid_argument("kl_full_gaussians: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> lb(b.cov);
  Eigen::LLT<Eigen::MatrixXd> la(a.cov);
  if (lb.info() != Eigen::Success || la.info() != Eigen::Success) {
    throw NumericError("kl_full_gaussians: covariance is not positive definite");
  }
  const Eigen::VectorXd d = b.mean - a.mean;
  const double trace = lb.solve(a.cov).trace();
  const double quad = d.dot(lb.solve(d));
  const double logdet_a = 2.0 * la.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_b = 2.0 * lb.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return std::max(0.5 * (trace + quad - static_cast<double>(n) + logdet_b - logdet_a), 0.0);
}

double entropy_categorical(std::span<const double> probs) {
  double total = 0.0;
  double h = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("entropy_categorical: negative probability");
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("entropy_categorical: probabilities do not sum to 1");
  return h;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace jsa
