#include "jsa/vae_baseline.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace jsa;
using namespace jsa::testing;

namespace {

Tensor fa_rows(const FAModel& fa, std::size_t n, Rng& rng) {
  Tensor x = Tensor::zeros({n, 3});
  for (std::size_t r = 0; r < n; ++r) {
    const Eigen::Vector3d v = fa.sample(rng);
    for (int d = 0; d < 3; ++d) x.at(r, d) = v[d];
  }
  return x;
}

Eigen::Vector3d as_vec(const Tensor& x, std::size_t r) { return {x.at(r, 0), x.at(r, 1), x.at(r, 2)}; }

/// Encoder with no hidden layer whose outputs are fixed: weights zero, bias
/// = (means..., log variances...).
MlpEncoder constant_encoder(std::size_t d, std::size_t obs, const std::vector<double>& bias, Rng& rng) {
  MlpEncoder inf(LatentSpec::gaussian(d), obs, {}, rng);
  inf.params().at("enc.l0.w").value = Tensor::zeros({obs, 2 * d});
  inf.params().at("enc.l0.b").value = Tensor::vector(bias);
  return inf;
}

}  // namespace

TEST_SUITE("vae") {
  TEST_CASE("ELBO with the exact FA posterior equals log p(x)") {
    const FAModel fa = FAModel::reference();
    Rng rng(1);
    LinearGaussianDecoder gen(LatentSpec::gaussian(2), 3, fa.noise_var, rng);
    gen.set_from_fa(fa);
    FAPosteriorProposal exact(fa);
    for (int k = 0; k < 3; ++k) {
      const Tensor x = fa_rows(fa, 1, rng);
      CHECK(std::abs(elbo(x, gen, exact, rng, 1000) - fa.log_marginal(as_vec(x, 0))) < 0.02);
    }
  }

  TEST_CASE("prior encoder with a decoder that ignores h: ELBO = log p(x) exactly") {
    Rng rng(2);
    LinearGaussianDecoder gen(LatentSpec::gaussian(2), 3, 0.3, rng);
    FAModel flat = FAModel::reference();
    flat.loading.setZero();
    flat.noise_var = 0.3;
    gen.set_from_fa(flat);
    MlpEncoder prior = constant_encoder(2, 3, {0, 0, 0, 0}, rng);
    const Tensor x = random_tensor({4, 3}, rng, -2, 2);
    double expected = 0.0;
    for (std::size_t r = 0; r < 4; ++r) expected += flat.log_marginal(as_vec(x, r)) / 4.0;
    CHECK(elbo(x, gen, prior, rng, 7) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("ELBO stays below log p(x) for random encoders (50 probes, 3σ slack)") {
    const FAModel fa = FAModel::reference();
    Rng rng(3);
    LinearGaussianDecoder gen(LatentSpec::gaussian(2), 3, fa.noise_var, rng);
    gen.set_from_fa(fa);
    for (int probe = 0; probe < 50; ++probe) {
      MlpEncoder inf(LatentSpec::gaussian(2), 3, {4}, rng);
      const Tensor x = repeat_rows(fa_rows(fa, 1, rng), 10000);
      Proposal p = inf.propose(x, nullptr, rng);
      const auto lj = log_joint_values(gen, x, p.z);
      double m = 0.0, s2 = 0.0;
      for (std::size_t r = 0; r < 10000; ++r) m += (lj[r] - p.log_q[r]) / 10000.0;
      for (std::size_t r = 0; r < 10000; ++r) s2 += std::pow(lj[r] - p.log_q[r] - m, 2) / 9999.0;
      const double se = std::sqrt(s2 / 10000.0);
      const double bound = elbo(x, gen, inf, rng, 1);
      CHECK(bound <= fa.log_marginal(as_vec(x, 0)) + 3.0 * se);
      CHECK(std::abs(bound - m) < 6.0 * se);
    }
  }

  TEST_CASE("frozen-noise ELBO gradients match finite differences") {
    Rng rng(4);
    for (int k = 0; k < 5; ++k) {
      MlpDecoder gen(LatentSpec::gaussian(2), 3, {5}, ObservationModel::diag_gaussian, rng);
      MlpEncoder inf(LatentSpec::gaussian(2), 3, {5}, rng);
      const Tensor x = random_tensor({4, 3}, rng);
      const Tensor eps = random_tensor({4, 2}, rng, -2, 2);
      auto f = [&](Tape& t) { return elbo_objective(t, x, gen, inf, eps); };
      CHECK(finite_diff_check(f, gen.params()) < 1e-4);
      CHECK(finite_diff_check(f, inf.params()) < 1e-4);
    }
  }

  TEST_CASE("decoder independent of h: φ-gradient is the negative KL gradient in expectation") {
    Rng rng(5);
    LinearGaussianDecoder gen(LatentSpec::gaussian(2), 3, 0.5, rng);
    FAModel flat = FAModel::reference();
    flat.loading.setZero();
    gen.set_from_fa(flat);
    const double mu = 0.7, log_var = -0.4;
    MlpEncoder inf = constant_encoder(2, 3, {mu, 0.0, log_var, 0.0}, rng);
    const std::size_t n = 40000;
    const Tensor x = repeat_rows(random_tensor({1, 3}, rng), n);
    elbo_gradients(x, gen, inf, rng);
    // -KL[N(μ, σ²) ‖ N(0, 1)] = -(μ² + σ² - 1 - log σ²) / 2
    const Tensor& g = inf.params().at("enc.l0.b").grad;
    CHECK(g[0] == doctest::Approx(-mu).epsilon(0.03));
    CHECK(std::abs(g[1]) < 0.02);
    CHECK(std::abs(g[2] - -0.5 * (std::exp(log_var) - 1.0)) < 0.02);
    CHECK(std::abs(g[3]) < 0.02);
  }

  TEST_CASE("batch gradient is the mean of per-row gradients") {
    Rng rng(6);
    MlpDecoder gen(LatentSpec::gaussian(2), 3, {4}, ObservationModel::diag_gaussian, rng);
    MlpEncoder inf(LatentSpec::gaussian(2), 3, {4}, rng);
    const Tensor x = random_tensor({3, 3}, rng);
    const Tensor eps = random_tensor({3, 2}, rng);
    elbo_gradients(x, gen, inf, eps);
    std::map<std::string, Tensor> whole;
    for (const auto& [n, p] : inf.params()) whole[n] = p.grad;
    std::map<std::string, Tensor> acc;
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<std::size_t> one{r};
      elbo_gradients(take_rows(x, one), gen, inf, take_rows(eps, one));
      for (const auto& [n, p] : inf.params()) {
        if (!acc.contains(n)) acc[n] = Tensor::zeros(p.grad.shape());
        for (std::size_t i = 0; i < p.grad.size(); ++i) acc[n][i] += p.grad[i] / 3.0;
      }
    }
    for (const auto& [n, g] : whole) CHECK(max_abs_diff(g, acc[n]) < 1e-12);
  }

  TEST_CASE("discrete latents are unsupported") {
    Rng rng(7);
    MlpDecoder gen(LatentSpec::bernoulli(2), 3, {4}, ObservationModel::diag_gaussian, rng);
    MlpEncoder inf(LatentSpec::bernoulli(2), 3, {4}, rng);
    const Tensor x = random_tensor({2, 3}, rng);
    CHECK_THROWS_AS(elbo(x, gen, inf, rng, 1), UnsupportedFactorError);
    CHECK_THROWS_AS(elbo_gradients(x, gen, inf, rng), UnsupportedFactorError);
    CHECK_THROWS_AS(VaeTrainer(gen, inf, x, VaeConfig{}, 1), UnsupportedFactorError);
  }

  TEST_CASE("trainer: zero iterations, replay, finite trace, rising ELBO") {
    auto run = [](std::uint64_t iters) {
      Rng rng(8);
      const FAModel fa = FAModel::reference();
      const Tensor x = fa_rows(fa, 100, rng);
      MlpDecoder gen(LatentSpec::gaussian(2), 3, {}, ObservationModel::diag_gaussian, rng);
      MlpEncoder inf(LatentSpec::gaussian(2), 3, {10}, rng);
      VaeConfig cfg;
      cfg.sa.base_rate = 1e-2;
      cfg.eval_samples = 20;
      VaeTrainer trainer(gen, inf, x, cfg, 3);
      return run_training(trainer, LoopConfig{iters, 100});
    };
    const TrainRun zero = run(0);
    REQUIRE(zero.rows.size() == 1);
    const TrainRun a = run(600), b = run(600);
    REQUIRE(a.rows.size() == 7);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].values == b.rows[i].values);
      CHECK(std::isfinite(*a.rows[i].get("elbo")));
    }
    CHECK(zero.rows[0].values == a.rows[0].values);
    CHECK(*a.rows.back().get("elbo") > *a.rows.front().get("elbo") + 1.0);
  }
}
