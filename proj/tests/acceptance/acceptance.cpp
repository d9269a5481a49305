// Acceptance run: one PASS/FAIL line per criterion.
//
//   jsa_acceptance            all criteria
//   jsa_acceptance 3 5        selected criteria
//
// Exit status is 0 when every selected criterion passes.

#include "gradient_sweep.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include "jsa/cli/run_config.hpp"
#include "jsa/cli/runner.hpp"
#include "jsa/experiments.hpp"
#include "jsa/jsa_trainer.hpp"
#include "jsa/models.hpp"
#include "jsa/sa_mis.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace jsa;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets, fixed here.
constexpr double kFaKlMax = 0.01;
constexpr double kFaVaeRatioMin = 5.0;
constexpr double kFaSeconds = 300.0;
constexpr double kRhoTarget = 0.66;
constexpr double kRhoTol = 0.01;
constexpr double kQuadratureTol = 1e-3;
constexpr double kMisTvMax = 0.02;
constexpr double kMisSeconds = 60.0;
constexpr double kSaTol = 0.05;
constexpr double kSaSeconds = 10.0;
constexpr std::size_t kGmmModesMin = 14;
constexpr double kGmmSpuriousMax = 0.10;
constexpr double kGmmSeconds = 900.0;
constexpr double kCfgTrainedMin = 0.70;
constexpr double kCfgUntrainedMax = 0.05;
constexpr double kCfgSeconds = 1800.0;
constexpr double kFdTol = 1e-4;
constexpr std::size_t kFdCases = 100;
constexpr double kClusterErrMax = 0.05;
constexpr double kSemiSeconds = 1200.0;
constexpr std::uint64_t kExactSteps = 10000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

fs::path run_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "jsa_acceptance" / name;
  fs::remove_all(p);
  return p;
}

cli::RunSummary run(const std::string& experiment, std::uint64_t seed, const std::vector<std::string>& overrides,
                    const std::string& name) {
  const cli::RunConfig c =
      cli::parse_config(R"({"experiment": ")" + experiment + R"("})", overrides, {{"seed", std::to_string(seed)}});
  return cli::train(c, run_dir(name));
}

/// Value of `column` in the first data row of a metrics CSV.
double first_metric(const fs::path& metrics_csv, const std::string& column) {
  std::ifstream in(metrics_csv);
  std::string header, row, cell;
  std::getline(in, header);
  std::getline(in, row);
  std::vector<std::string> names, values;
  for (std::stringstream hs(header); std::getline(hs, cell, ',');) names.push_back(cell);
  for (std::stringstream rs(row); std::getline(rs, cell, ',');) values.push_back(cell);
  for (std::size_t i = 0; i < names.size() && i < values.size(); ++i) {
    if (names[i] == column) return std::stod(values[i]);
  }
  throw std::runtime_error("column " + column + " missing from " + metrics_csv.string());
}

/// Maximum-likelihood FA fit with the noise variance held at its true value:
/// μ is the sample mean and P Pᵀ keeps the top two eigen-directions of the
/// sample covariance, shrunk by r.
double fa_mle_kl(const FAModel& truth, const Tensor& x) {
  const std::size_t n = x.rows();
  Eigen::MatrixXd m(n, 3);
  for (std::size_t r = 0; r < n; ++r)
    for (int d = 0; d < 3; ++d) m(r, d) = x.at(r, d);
  FAModel est = truth;
  est.mu = m.colwise().mean().transpose();
  m.rowwise() -= est.mu.transpose();
  const Eigen::Matrix3d s = m.transpose() * m / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(s);
  for (int k = 0; k < 2; ++k) {
    const int idx = 2 - k;  // eigenvalues ascend
    const double scale = std::sqrt(std::max(eig.eigenvalues()[idx] - truth.noise_var, 0.0));
    est.loading.col(k) = eig.eigenvectors().col(idx) * scale;
  }
  return fa_marginal_kl(truth, est);
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Clock clock;
  bool pass = true;
  std::ostringstream d;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const double jsa = run("fa", seed, {}, "c1_jsa").final_metrics.at("kl_marginal");
    const double vae = run("fa", seed, {"trainer=vae"}, "c1_vae").final_metrics.at("kl_marginal");
    FADatasetSpec spec;
    spec.seed = seed;
    const FADataset data = gen_fa_data(spec);
    const double mle = fa_mle_kl(data.oracle, data.x);
    pass = pass && jsa < kFaKlMax && vae >= kFaVaeRatioMin * jsa;
    d << "seed " << seed << ": KL jsa=" << fmt(jsa) << " vae=" << fmt(vae) << " (ratio " << fmt(vae / jsa, 3)
      << ", sample MLE " << fmt(mle) << "); ";
  }
  const double secs = clock.seconds();
  pass = pass && secs < kFaSeconds;
  d << fmt(secs, 3) << " s";
  return {pass, d.str()};
}

Outcome criterion2() {
  const FAModel fa = FAModel::reference();
  const double rho = fa_exact_posterior(fa, fa.mu).correlation(0, 1);
  double worst = 0.0;
  Rng rng(2);
  for (int k = 0; k < 5; ++k) {
    const Eigen::Vector3d x = fa.sample(rng);
    const FullGaussian post = fa_exact_posterior(fa, x);
    const auto q = testing::fa_posterior_quadrature(fa, x, post.mean[0], post.mean[1], 2.0, 801);
    worst = std::max(worst, std::abs(q.correlation() - post.correlation(0, 1)));
  }
  const bool pass = std::abs(std::abs(rho) - kRhoTarget) <= kRhoTol && worst < kQuadratureTol;
  return {pass, "rho=" + fmt(rho, 6) + ", quadrature gap " + fmt(worst, 3)};
}

Outcome criterion3() {
  Clock clock;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t bits = 3 + seed % 6;  // 3..8
    LinearGaussianDecoder gen(LatentSpec::bernoulli(bits, 0.4), 3, 0.5, rng);
    MlpEncoder inf(LatentSpec::bernoulli(bits), 3, {}, rng);
    const Tensor x_row = generate(gen, 1, rng);
    const std::vector<double> exact = testing::enumerate_posterior_oracle(gen, x_row);
    // Independent-bit proposal: exact marginals pulled halfway to 1/2.
    Tensor bias = Tensor::zeros({bits});
    for (std::size_t i = 0; i < bits; ++i) {
      double m = 0.0;
      for (std::size_t s = 0; s < exact.size(); ++s) m += ((s >> i) & 1u) ? exact[s] : 0.0;
      m = 0.5 * m + 0.25;
      bias[i] = std::log(m / (1.0 - m));
    }
    inf.params().at("enc.l0.w").value = Tensor::zeros({3, bits});
    inf.params().at("enc.l0.b").value = bias;

    const std::size_t chains = 64;
    ChainBatch c = start_chains(repeat_rows(x_row, chains), {}, gen, inf, rng);
    AcceptanceStats stats;
    std::vector<double> counts(exact.size(), 0.0);
    for (int t = 0; t < 10000; ++t) {
      mis_transition(c, gen, inf, rng, stats);
      if (t < 100) continue;
      for (std::size_t r = 0; r < chains; ++r) counts[bits_to_index(c.z.bits.row(r))] += 1.0;
    }
    double total = 0.0;
    for (double v : counts) total += v;
    for (double& v : counts) v /= total;
    worst = std::max(worst, testing::total_variation(counts, exact));
  }
  const double secs = clock.seconds();
  return {worst < kMisTvMax && secs < kMisSeconds, "worst TV " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s"};
}

Outcome criterion4() {
  Clock clock;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    worst = std::max(worst, run("toy-sa", seed, {}, "c4").final_metrics.at("abs_error"));
  }
  const double secs = clock.seconds();
  return {worst < kSaTol && secs < kSaSeconds, "worst |lambda-3| " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s"};
}

Outcome criterion5() {
  Clock clock;
  const cli::RunSummary s = run("gmm", 0, {"eval.samples=10000"}, "c5");
  const double secs = clock.seconds();
  const auto modes = static_cast<std::size_t>(s.final_metrics.at("modes_hit"));
  const double spurious = s.final_metrics.at("spurious_mass");
  return {modes >= kGmmModesMin && spurious < kGmmSpuriousMax && secs < kGmmSeconds,
          "modes_hit " + std::to_string(modes) + "/16, spurious_mass " + fmt(spurious, 3) + ", " + fmt(secs, 3) +
              " s"};
}

Outcome criterion6() {
  Clock clock;
  const cli::RunSummary s = run("cfg", 0, {"eval.samples=1000"}, "c6");
  const double secs = clock.seconds();
  const double trained = s.final_metrics.at("valid_fraction");
  const double untrained = first_metric(fs::temp_directory_path() / "jsa_acceptance" / "c6" / "metrics.csv", "valid_fraction");
  return {trained >= kCfgTrainedMin && untrained < kCfgUntrainedMax && secs < kCfgSeconds,
          "valid " + fmt(trained, 3) + " trained vs " + fmt(untrained, 3) + " untrained, " + fmt(secs, 3) + " s"};
}

Outcome criterion7() {
  bool pass = true;
  std::size_t families = 0;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& sweep : {testing::op_gradient_sweep(kFdCases, 7), testing::model_gradient_sweep(kFdCases, 77)}) {
    for (const auto& r : sweep) {
      ++families;
      pass = pass && r.cases == kFdCases && r.worst < kFdTol;
      if (r.worst >= worst) {
        worst = r.worst;
        worst_name = r.name;
      }
    }
  }
  return {pass, std::to_string(families) + " ops/densities x " + std::to_string(kFdCases) + " cases, worst " +
                    fmt(worst, 3) + " (" + worst_name + ")"};
}

Outcome criterion8() {
  Clock clock;
  // Two well-separated clusters, 4 labels and 400 unlabeled points.
  Rng rng(17);
  LatentSpec spec = LatentSpec::bernoulli(2).with_classes(2);
  MlpDecoder gen(spec, 2, {8}, ObservationModel::diag_gaussian, rng);
  MlpEncoder inf(spec, 2, {8}, rng);
  TwoClusterData unl = gen_two_clusters(400, 2, 6.0, 1.0, rng);
  TwoClusterData lab = gen_two_clusters(4, 2, 6.0, 1.0, rng);
  TwoClusterData test = gen_two_clusters(1000, 2, 6.0, 1.0, rng);
  JsaConfig cfg;
  cfg.sa.base_rate = 1e-2;
  cfg.semi.labeled_batch = 4;
  cfg.semi.unlabeled_batch = 50;
  JsaTrainer trainer(gen, inf, unl.x, lab.x, lab.labels, cfg, 5);
  run_training(trainer, LoopConfig{400, 100});
  const double cluster_err = classification_error(inf, test.x, test.labels);

  const double semi = run("semi-digits", 0, {}, "c8_semi").final_metrics.at("test_error");
  const double base = run("semi-digits", 0, {"semi.classifier_only=true"}, "c8_base").final_metrics.at("test_error");
  const double secs = clock.seconds();
  return {cluster_err < kClusterErrMax && semi < base && secs < kSemiSeconds,
          "two-cluster error " + fmt(cluster_err, 3) + "; digits error " + fmt(semi, 4) + " vs supervised-only " +
              fmt(base, 4) + ", " + fmt(secs, 3) + " s"};
}

Outcome criterion9() {
  // α = 0 with no labeled batch: bit-identical to the unsupervised update.
  Rng rng(9);
  const LatentSpec spec = LatentSpec::bernoulli(3).with_classes(4);
  MlpDecoder gen(spec, 4, {6}, ObservationModel::diag_gaussian, rng);
  MlpEncoder inf(spec, 4, {6}, rng);
  UnsupBatch b{testing::random_tensor({6, 4}, rng), {}};
  for (int j = 0; j < 2; ++j) b.samples.push_back(inf.propose(b.x, nullptr, rng).z);
  unsup_gradients(b, gen, inf);
  const GradientMap theta = snapshot_grads(gen.params()), phi = snapshot_grads(inf.params());
  SemiConfig semi;
  semi.alpha = 0.0;
  semi_gradients(&b, nullptr, semi, gen, inf);
  bool identical = true;
  auto same = [&](const GradientMap& a, const GradientMap& c) {
    for (const auto& [name, g] : a) {
      const Tensor& h = c.at(name);
      identical = identical && std::memcmp(g.data().data(), h.data().data(), 8 * g.size()) == 0;
    }
  };
  same(theta, snapshot_grads(gen.params()));
  same(phi, snapshot_grads(inf.params()));

  // Proposal equal to the posterior: every one of 10^4 steps is accepted.
  const FAModel fa = FAModel::reference();
  LinearGaussianDecoder fa_gen(LatentSpec::gaussian(2), 3, fa.noise_var, rng);
  fa_gen.set_from_fa(fa);
  FAPosteriorProposal exact(fa);
  Tensor x = Tensor::zeros({1, 3});
  const Eigen::Vector3d v = fa.sample(rng);
  for (int d = 0; d < 3; ++d) x.at(0, d) = v[d];
  ChainBatch c = start_chains(x, {}, fa_gen, exact, rng);
  AcceptanceStats stats;
  for (std::uint64_t t = 0; t < kExactSteps; ++t) mis_transition(c, fa_gen, exact, rng, stats);

  const bool pass = identical && stats.proposals == kExactSteps && stats.rate() == 1.0;
  return {pass, std::string("alpha=0 reduction ") + (identical ? "bit-identical" : "DIFFERS") +
                    "; exact proposal accepted " + std::to_string(stats.accepts) + "/" +
                    std::to_string(stats.proposals)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Outcome()>> criteria = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [k, f] : criteria) selected.push_back(k);
  }
  bool all = true;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")" << std::endl;
  }
  return all ? 0 : 1;
}
