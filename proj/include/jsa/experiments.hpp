#pragma once

#include "jsa/distributions.hpp"
#include "jsa/models.hpp"
#include "jsa/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace jsa {

// --- factor analysis --------------------------------------------------------

struct FADatasetSpec {
  std::size_t n = 100;
  FAModel oracle = FAModel::reference();
  std::uint64_t seed = 0;
};

struct FADataset {
  Tensor x;  // [n, 3]
  FAModel oracle;
};

FADataset gen_fa_data(const FADatasetSpec& spec);

struct FAOracleMetrics {
  double kl_marginal = 0.0;
  double kl_posterior = 0.0;
};

/// KL[p₀(x) ‖ p_est(x)] and the mean over probes of
/// KL[p_est(h | x) ‖ q_φ(h | x)] with q_φ a diagonal Gaussian encoder.
FAOracleMetrics kl_oracles_fa(const FAModel& oracle, const FAModel& est, InferenceModel& inf, const Tensor& probes);
/// Same posterior term with the encoder outputs given explicitly per probe.
double kl_posterior_gap(const FAModel& est, const std::vector<DiagGaussianParams>& encoder, const Tensor& probes);
/// Diagonal Gaussian outputs of an encoder with Gaussian heads, one per row.
std::vector<DiagGaussianParams> encoder_gaussians(InferenceModel& inf, const Tensor& x);

// --- grid Gaussian mixture ---------------------------------------------------

struct GMMDatasetSpec {
  std::size_t n = 1600;
  std::vector<double> grid{-1.5, -0.5, 0.5, 1.5};
  double std_dev = 0.05;
  std::uint64_t seed = 0;

  std::size_t components() const { return grid.size() * grid.size(); }
  /// Node k sits at (grid[k % g], grid[k / g]).
  std::vector<std::pair<double, double>> nodes() const;
};

struct GMMDataset {
  Tensor x;                        // [n, 2]
  std::vector<std::size_t> labels; // true component ids, metrics only
};

GMMDataset gen_gmm_data(const GMMDatasetSpec& spec);

struct ModeRecovery {
  std::size_t modes_hit = 0;
  double spurious_mass = 0.0;
};

/// A node is hit when at least `min_mass` of the samples lie within
/// `radius` of it; spurious mass is the fraction farther than `radius`
/// from every node. radius defaults to 3 standard deviations.
ModeRecovery mode_recovery(const Tensor& samples, const GMMDatasetSpec& spec, double min_mass = 0.01,
                           double radius = -1.0);

// --- context-free grammar sequences ------------------------------------------

/// Alphabet of the corpus; the index is the token id.
inline constexpr char kCfgAlphabet[] = {'x', '+', '-', '*', '/', ' '};
inline constexpr std::size_t kCfgVocab = 6;
inline constexpr std::size_t kCfgPad = 5;

struct CFGCorpusSpec {
  std::size_t size = 5000;
  std::size_t max_length = 12;
  double p_terminal = 0.5;  // S → x; the remaining mass is split evenly over the four binary rules
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<std::string> gen_cfg_corpus(const CFGCorpusSpec& spec);

enum class CfgVerdict { valid, invalid, alphabet_violation };

/// Recognizer for x((+|-|*|/)x)* followed by space padding only.
CfgVerdict cfg_check(const std::string& s);
bool cfg_valid(const std::string& s);

/// [n, length] token-index tensor.
Tensor encode_sequences(const std::vector<std::string>& strings, std::size_t length);
std::vector<std::string> decode_sequences(const Tensor& tokens);

struct ValidityReport {
  std::size_t valid = 0;
  std::size_t invalid = 0;
  std::size_t alphabet_violations = 0;
  double valid_fraction() const;
};

ValidityReport cfg_validity(const std::vector<std::string>& strings);

// --- two-cluster synthetic for the semi-supervised smoke test -------------------

struct TwoClusterData {
  Tensor x;
  std::vector<std::size_t> labels;
};

/// Two isotropic Gaussian clusters at ±separation/2 along every axis.
TwoClusterData gen_two_clusters(std::size_t n, std::size_t dim, double separation, double std_dev, Rng& rng);

// --- CSV ----------------------------------------------------------------------

/// Writes "# <provenance>" then a header row, one row per point, optional label column.
void write_points_csv(const std::filesystem::path& path, const std::string& provenance, const Tensor& x,
                      const std::vector<std::size_t>* labels = nullptr);
void write_lines(const std::filesystem::path& path, const std::string& provenance,
                 const std::vector<std::string>& lines);

}  // namespace jsa
