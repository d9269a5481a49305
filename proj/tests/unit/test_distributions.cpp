#include "jsa/distributions.hpp"
#include "jsa/models.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

using namespace jsa;
using jsa::testing::random_tensor;

namespace {

double gauss_pdf_1d(double x, double m, double var) {
  return std::exp(-0.5 * (x - m) * (x - m) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace

TEST_SUITE("distributions") {
  TEST_CASE("Bernoulli log-probabilities normalise over all bit patterns") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t d = 1 + trial % 5;
      std::vector<double> means(d);
      for (double& m : means) m = 0.05 + 0.9 * uniform01(rng);
      double total = 0.0;
      for (std::size_t s = 0; s < (1u << d); ++s) total += std::exp(bernoulli_log_prob(means, index_to_bits(s, d)));
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("Bernoulli means at the boundary are clamped and counted") {
    const auto before = bernoulli_clamp_count();
    std::vector<double> means{0.0, 1.0};
    std::vector<double> bits{1.0, 0.0};
    const double lp = bernoulli_log_prob(means, bits);
    CHECK(std::isfinite(lp));
    CHECK(bernoulli_clamp_count() == before + 2);
  }

  TEST_CASE("logit form agrees with the mean form") {
    std::vector<double> logits{-2.0, 0.3, 4.0};
    std::vector<double> bits{1.0, 0.0, 1.0};
    std::vector<double> means;
    for (double l : logits) means.push_back(1.0 / (1.0 + std::exp(-l)));
    CHECK(bernoulli_logit_log_prob(logits, bits) == doctest::Approx(bernoulli_log_prob(means, bits)).epsilon(1e-12));
  }

  TEST_CASE("diagonal Gaussian density integrates to one (2d quadrature)") {
    DiagGaussianParams g{{0.3, -0.4}, {std::log(0.5), std::log(1.3)}};
    const double h = 0.02;
    double total = 0.0;
    for (double x = -8; x <= 8; x += h) {
      for (double y = -8; y <= 8; y += h) {
        std::vector<double> v{x, y};
        total += std::exp(diag_gaussian_log_prob(g, v)) * h * h;
      }
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
    std::vector<double> p{0.1, 0.2};
    CHECK(diag_gaussian_log_prob(g, p) ==
          doctest::Approx(std::log(gauss_pdf_1d(0.1, 0.3, 0.5) * gauss_pdf_1d(0.2, -0.4, 1.3))).epsilon(1e-12));
  }

  TEST_CASE("full Gaussian density matches the explicit 2x2 formula") {
    FullGaussian g{Eigen::Vector2d(0.5, -1.0), Eigen::Matrix2d()};
    g.cov << 2.0, 0.6, 0.6, 1.0;
    const Eigen::Vector2d x(1.0, 0.2);
    const double det = 2.0 * 1.0 - 0.36;
    const Eigen::Vector2d d = x - Eigen::Vector2d(0.5, -1.0);
    const double quad = (1.0 * d[0] * d[0] - 2 * 0.6 * d[0] * d[1] + 2.0 * d[1] * d[1]) / det;
    const double expected = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * quad;
    CHECK(full_gaussian_log_prob(g, x) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("categorical log-probability and entropy") {
    std::vector<double> p{0.2, 0.5, 0.3};
    CHECK(categorical_log_prob(p, 1) == doctest::Approx(std::log(0.5)));
    std::vector<double> uniform(7, 1.0 / 7.0);
    CHECK(entropy_categorical(uniform) == doctest::Approx(std::log(7.0)));
    std::vector<double> bad{-0.1, 1.1};
    CHECK_THROWS_AS(entropy_categorical(bad), std::invalid_argument);
    std::vector<double> unnormalised{0.5, 0.6};
    CHECK_THROWS_AS(entropy_categorical(unnormalised), std::invalid_argument);
  }

  TEST_CASE("argmax takes the lowest index on ties") {
    std::vector<double> tie{1.0, 3.0, 3.0};
    CHECK(argmax(tie) == 1);
    std::vector<double> flat(5, 0.0);
    CHECK(argmax(flat) == 0);
  }

  TEST_CASE("KL divergences") {
    // KL(N(0,1) || N(1,4)) = log 2 + (1 + 1) / 8 - 1/2
    DiagGaussianParams a{{0.0}, {0.0}};
    DiagGaussianParams b{{1.0}, {std::log(4.0)}};
    CHECK(kl_diag_gaussians(a, b) == doctest::Approx(std::log(2.0) - 0.25).epsilon(1e-12));
    CHECK(kl_diag_gaussians(a, a) == 0.0);

    FullGaussian fa{Eigen::Vector2d(0.0, 0.0), Eigen::Matrix2d::Identity()};
    FullGaussian fb{Eigen::Vector2d(1.0, 0.0), Eigen::Matrix2d::Identity() * 4.0};
    fb.cov(1, 1) = 1.0;
    CHECK(kl_full_gaussians(fa, fb) == doctest::Approx(std::log(2.0) - 0.25).epsilon(1e-12));
  }

  TEST_CASE("KL between Gaussians agrees with a Monte-Carlo estimate") {
    Rng rng(99);
    FullGaussian p{Eigen::Vector2d(0.2, -0.1), Eigen::Matrix2d()};
    p.cov << 1.0, 0.5, 0.5, 0.8;
    FullGaussian q{Eigen::Vector2d(-0.3, 0.4), Eigen::Matrix2d()};
    q.cov << 1.5, 0.0, 0.0, 0.6;
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd x = sample_full_gaussian(p, rng);
      const double v = full_gaussian_log_prob(p, x) - full_gaussian_log_prob(q, x);
      s += v;
      s2 += v * v;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    CHECK(std::abs(mean - kl_full_gaussians(p, q)) < 4.0 * se);
  }

  TEST_CASE("samplers reproduce their moments") {
    Rng rng(7);
    const int n = 100000;
    DiagGaussianParams g{{1.0, -2.0}, {std::log(0.25), std::log(4.0)}};
    double m0 = 0, m1 = 0, v0 = 0, v1 = 0;
    std::vector<double> means{0.2, 0.7};
    double b0 = 0, b1 = 0;
    std::vector<double> probs{0.1, 0.6, 0.3};
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) {
      const auto s = sample_diag_gaussian(g, rng);
      m0 += s[0];
      m1 += s[1];
      v0 += (s[0] - 1.0) * (s[0] - 1.0);
      v1 += (s[1] + 2.0) * (s[1] + 2.0);
      const auto b = sample_bernoulli(means, rng);
      b0 += b[0];
      b1 += b[1];
      ++counts[sample_categorical(probs, rng)];
    }
    CHECK(m0 / n == doctest::Approx(1.0).epsilon(0.01));
    CHECK(m1 / n == doctest::Approx(-2.0).epsilon(0.01));
    CHECK(v0 / n == doctest::Approx(0.25).epsilon(0.02));
    CHECK(v1 / n == doctest::Approx(4.0).epsilon(0.02));
    CHECK(std::abs(b0 / n - 0.2) < 0.005);
    CHECK(std::abs(b1 / n - 0.7) < 0.005);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] / double(n) - probs[k]) < 0.005);
  }

  TEST_CASE("reparameterised sample moments and gradient path") {
    Rng rng(8);
    Tape tape(false);
    const std::size_t n = 50000;
    Var m = tape.constant(Tensor::filled({n, 1}, 0.5));
    Var lv = tape.constant(Tensor::filled({n, 1}, std::log(2.0)));
    const Tensor h = reparam_sample(m, lv, rng).value();
    double s = 0, s2 = 0;
    for (double v : h.data()) {
      s += v;
      s2 += v * v;
    }
    const double mean = s / n;
    CHECK(mean == doctest::Approx(0.5).epsilon(0.03));
    CHECK(s2 / n - mean * mean == doctest::Approx(2.0).epsilon(0.03));
    CHECK_THROWS_AS(require_reparameterizable(LatentSpec::bernoulli(3)), UnsupportedFactorError);
    CHECK_NOTHROW(require_reparameterizable(LatentSpec::gaussian(3)));
  }

  TEST_CASE("tape densities agree with scalar densities row by row") {
    Rng rng(12);
    Tape tape(false);
    Tensor logits = random_tensor({3, 4}, rng, -3, 3);
    Tensor bits = Tensor::matrix(3, 4, {1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 1});
    const Tensor lp = bernoulli_logit_log_prob(tape.constant(logits), bits).value();
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(lp[r] == doctest::Approx(bernoulli_logit_log_prob(logits.row(r), bits.row(r))).epsilon(1e-12));
    }
    Tensor mean = random_tensor({3, 2}, rng), lv = random_tensor({3, 2}, rng), x = random_tensor({3, 2}, rng);
    const Tensor gp = diag_gaussian_log_prob(tape.constant(mean), tape.constant(lv), tape.constant(x)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      DiagGaussianParams g{{mean.row(r).begin(), mean.row(r).end()}, {lv.row(r).begin(), lv.row(r).end()}};
      CHECK(gp[r] == doctest::Approx(diag_gaussian_log_prob(g, x.row(r))).epsilon(1e-12));
    }
    std::vector<std::size_t> y{2, 0, 3};
    const Tensor cp = categorical_logit_log_prob(tape.constant(logits), y).value();
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> l(logits.row(r).begin(), logits.row(r).end());
      CHECK(cp[r] == doctest::Approx(l[y[r]] - log_sum_exp(l)).epsilon(1e-12));
    }
  }

  TEST_CASE("latent spec text round-trip and validation") {
    LatentSpec s({{FactorKind::bernoulli, 4, 0.3}, {FactorKind::gaussian, 1, 0.5}, {FactorKind::categorical, 10, 0.5}});
    CHECK(LatentSpec::parse(s.to_string()) == s);
    CHECK(s.total_dim() == 15);
    CHECK(s.without_classes().with_classes(10) == s);
    CHECK_THROWS_AS(LatentSpec({{FactorKind::categorical, 3, 0.5}, {FactorKind::categorical, 2, 0.5}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(LatentSpec::parse("poisson:3"), std::invalid_argument);
  }

  TEST_CASE("latent values serialise and validate") {
    LatentSpec s({{FactorKind::bernoulli, 2, 0.5}, {FactorKind::gaussian, 1, 0.5}, {FactorKind::categorical, 3, 0.5}});
    LatentValue v{{1.0, 0.0}, {-0.25}, 2};
    CHECK(LatentValue::deserialize(s, v.serialize()) == v);
    LatentValue bad{{0.5, 0.0}, {0.0}, 1};
    CHECK_THROWS_AS(bad.validate(s), std::invalid_argument);
    LatentValue no_label{{1.0, 0.0}, {0.0}, std::nullopt};
    CHECK_THROWS_AS(no_label.validate(s), std::invalid_argument);
  }

  TEST_CASE("prior log-probability sums factor terms") {
    LatentSpec s({{FactorKind::bernoulli, 2, 0.25}, {FactorKind::gaussian, 1, 0.5}, {FactorKind::categorical, 4, 0.5}});
    LatentValue v{{1.0, 0.0}, {0.5}, 3};
    const double expected = std::log(0.25) + std::log(0.75) + std::log(gauss_pdf_1d(0.5, 0.0, 1.0)) + std::log(0.25);
    CHECK(prior_log_prob(s, v) == doctest::Approx(expected).epsilon(1e-12));
  }
}
