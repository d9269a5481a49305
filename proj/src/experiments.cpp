#include "jsa/experiments.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

namespace jsa {

FADataset gen_fa_data(const FADatasetSpec& spec) {
  Rng rng(spec.seed);
  FADataset d{Tensor::zeros({spec.n, 3}), spec.oracle};
  for (std::size_t i = 0; i < spec.n; ++i) {
    const Eigen::Vector3d v = spec.oracle.sample(rng);
    for (int j = 0; j < 3; ++j) d.x.at(i, j) = v[j];
  }
  return d;
}

std::vector<DiagGaussianParams> encoder_gaussians(InferenceModel& inf, const Tensor& x) {
  auto* enc = dynamic_cast<HeadedEncoder*>(&inf);
  if (!enc || inf.latent_spec().gaussian_dim() == 0) {
    throw UnsupportedFactorError(inf.architecture() + " has no Gaussian heads");
  }
  Tape tape(false);
  EncoderHeads h = enc->heads(tape, x);
  std::vector<DiagGaussianParams> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto m = h.gauss_mean.value().row(r);
    auto lv = h.gauss_log_var.value().row(r);
    out[r] = {{m.begin(), m.end()}, {lv.begin(), lv.end()}};
  }
  return out;
}

double kl_posterior_gap(const FAModel& est, const std::vector<DiagGaussianParams>& encoder, const Tensor& probes) {
  if (encoder.size() != probes.rows()) throw ShapeError("kl_posterior_gap: one encoder output per probe needed");
  double total = 0.0;
  for (std::size_t r = 0; r < probes.rows(); ++r) {
    auto row = probes.row(r);
    const FullGaussian post = fa_exact_posterior(est, Eigen::Vector3d(row[0], row[1], row[2]));
    const auto& q = encoder[r];
    FullGaussian qf{Eigen::Map<const Eigen::VectorXd>(q.mean.data(), 2), Eigen::MatrixXd::Zero(2, 2)};
    for (int j = 0; j < 2; ++j) qf.cov(j, j) = std::exp(q.log_var[j]);
    total += kl_full_gaussians(post, qf);
  }
  return total / static_cast<double>(probes.rows());
}

FAOracleMetrics kl_oracles_fa(const FAModel& oracle, const FAModel& est, InferenceModel& inf, const Tensor& probes) {
  return {fa_marginal_kl(oracle, est), kl_posterior_gap(est, encoder_gaussians(inf, probes), probes)};
}

// ---------------------------------------------------------------------------

std::vector<std::pair<double, double>> GMMDatasetSpec::nodes() const {
  std::vector<std::pair<double, double>> out;
  const std::size_t g = grid.size();
  for (std::size_t k = 0; k < g * g; ++k) out.emplace_back(grid[k % g], grid[k / g]);
  return out;
}

GMMDataset gen_gmm_data(const GMMDatasetSpec& spec) {
  if (spec.grid.empty() || !(spec.std_dev >= 0.0)) throw std::invalid_argument("gmm: invalid grid or std");
  Rng rng(spec.seed);
  const auto nodes = spec.nodes();
  std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
  GMMDataset d{Tensor::zeros({spec.n, 2}), std::vector<std::size_t>(spec.n)};
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t k = pick(rng);
    d.labels[i] = k;
    d.x.at(i, 0) = nodes[k].first + spec.std_dev * standard_normal(rng);
    d.x.at(i, 1) = nodes[k].second + spec.std_dev * standard_normal(rng);
  }
  return d;
}

ModeRecovery mode_recovery(const Tensor& samples, const GMMDatasetSpec& spec, double min_mass, double radius) {
  if (samples.rank() != 2 || samples.cols() != 2) throw ShapeError("mode_recovery: expects [N, 2] samples");
  if (radius < 0.0) radius = 3.0 * spec.std_dev;
  const auto nodes = spec.nodes();
  std::vector<std::size_t> near(nodes.size(), 0);
  std::size_t spurious = 0;
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    bool close = false;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const double dx = samples.at(i, 0) - nodes[k].first;
      const double dy = samples.at(i, 1) - nodes[k].second;
      if (dx * dx + dy * dy <= r2) {
        ++near[k];
        close = true;
      }
    }
    spurious += !close;
  }
  ModeRecovery out;
  const double n = static_cast<double>(std::max<std::size_t>(samples.rows(), 1));
  for (std::size_t c : near) out.modes_hit += static_cast<double>(c) / n >= min_mass;
  out.spurious_mass = static_cast<double>(spurious) / n;
  return out;
}

// ---------------------------------------------------------------------------

void CFGCorpusSpec::validate() const {
  if (max_length < 1) throw std::invalid_argument("cfg.max_length: must be >= 1");
  if (!(p_terminal > 0.0 && p_terminal <= 1.0)) {
    throw std::invalid_argument("cfg.p_terminal: must lie in (0, 1] for derivations to terminate");
  }
}

namespace {

// Appends a derivation of S to out; false once it exceeds max_length.
bool expand(std::string& out, const CFGCorpusSpec& spec, Rng& rng) {
  static constexpr char kOps[] = {'+', '-', '*', '/'};
  if (out.size() >= spec.max_length) return false;
  if (uniform01(rng) < spec.p_terminal) {
    out.push_back('x');
    return true;
  }
  const char op = kOps[std::uniform_int_distribution<int>(0, 3)(rng)];
  if (!expand(out, spec, rng)) return false;
  out.push_back(op);
  return expand(out, spec, rng);
}

}  // namespace

std::vector<std::string> gen_cfg_corpus(const CFGCorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<std::string> corpus;
  corpus.reserve(spec.size);
  while (corpus.size() < spec.size) {
    std::string s;
    if (!expand(s, spec, rng) || s.size() > spec.max_length) continue;
    s.resize(spec.max_length, ' ');
    corpus.push_back(std::move(s));
  }
  return corpus;
}

CfgVerdict cfg_check(const std::string& s) {
  for (char c : s) {
    if (c != 'x' && c != '+' && c != '-' && c != '*' && c != '/' && c != ' ') return CfgVerdict::alphabet_violation;
  }
  std::size_t end = s.size();
  while (end > 0 && s[end - 1] == ' ') --end;
  if (end == 0) return CfgVerdict::invalid;
  for (std::size_t i = 0; i < end; ++i) {
    const bool want_x = i % 2 == 0;
    const char c = s[i];
    if (want_x ? c != 'x' : (c == 'x' || c == ' ')) return CfgVerdict::invalid;
  }
  return end % 2 == 1 ? CfgVerdict::valid : CfgVerdict::invalid;
}

bool cfg_valid(const std::string& s) { return cfg_check(s) == CfgVerdict::valid; }

Tensor encode_sequences(const std::vector<std::string>& strings, std::size_t length) {
  Tensor out = Tensor::zeros({strings.size(), length});
  for (std::size_t i = 0; i < strings.size(); ++i) {
    if (strings[i].size() != length) throw ShapeError("encode_sequences: string of wrong length");
    for (std::size_t t = 0; t < length; ++t) {
      std::size_t k = 0;
      while (k < kCfgVocab && kCfgAlphabet[k] != strings[i][t]) ++k;
      if (k == kCfgVocab) throw std::invalid_argument("encode_sequences: character outside the alphabet");
      out.at(i, t) = static_cast<double>(k);
    }
  }
  return out;
}

std::vector<std::string> decode_sequences(const Tensor& tokens) {
  std::vector<std::string> out(tokens.rows());
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    for (std::size_t t = 0; t < tokens.cols(); ++t) {
      const auto k = static_cast<std::size_t>(tokens.at(i, t));
      out[i].push_back(k < kCfgVocab ? kCfgAlphabet[k] : '?');
    }
  }
  return out;
}

double ValidityReport::valid_fraction() const {
  const std::size_t n = valid + invalid + alphabet_violations;
  return n == 0 ? 0.0 : static_cast<double>(valid) / static_cast<double>(n);
}

ValidityReport cfg_validity(const std::vector<std::string>& strings) {
  ValidityReport r;
  for (const auto& s : strings) {
    switch (cfg_check(s)) {
      case CfgVerdict::valid: ++r.valid; break;
      case CfgVerdict::invalid: ++r.invalid; break;
      case CfgVerdict::alphabet_violation: ++r.alphabet_violations; break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

TwoClusterData gen_two_clusters(std::size_t n, std::size_t dim, double separation, double std_dev, Rng& rng) {
  TwoClusterData d{Tensor::zeros({n, dim}), std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    d.labels[i] = y;
    const double centre = (y == 0 ? -0.5 : 0.5) * separation;
    for (std::size_t j = 0; j < dim; ++j) d.x.at(i, j) = centre + std_dev * standard_normal(rng);
  }
  return d;
}

// ---------------------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  return os;
}

}  // namespace

void write_points_csv(const std::filesystem::path& path, const std::string& provenance, const Tensor& x,
                      const std::vector<std::size_t>* labels) {
  std::ofstream os = open_out(path);
  os << "# " << provenance << '\n';
  for (std::size_t j = 0; j < x.cols(); ++j) os << (j ? "," : "") << "x" << j;
  if (labels) os << ",label";
  os << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) os << (j ? "," : "") << x.at(i, j);
    if (labels) os << ',' << (*labels)[i];
    os << '\n';
  }
  if (!os) throw std::ios_base::failure("write failed: " + path.string());
}

void write_lines(const std::filesystem::path& path, const std::string& provenance,
                 const std::vector<std::string>& lines) {
  std::ofstream os = open_out(path);
  os << "# " << provenance << '\n';
  for (const auto& l : lines) os << l << '\n';
  if (!os) throw std::ios_base::failure("write failed: " + path.string());
}

}  // namespace jsa
