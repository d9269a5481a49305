#pragma once

#include "jsa/distributions.hpp"
#include "jsa/tensor.hpp"

#include <random>

namespace jsa::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

/// Values bounded away from zero: |v| in [gap, hi].
inline Tensor away_from_zero(Shape shape, Rng& rng, double gap = 0.05, double hi = 1.0) {
  Tensor t = random_tensor(std::move(shape), rng, gap, hi);
  std::bernoulli_distribution flip(0.5);
  for (double& v : t.data()) v = flip(rng) ? -v : v;
  return t;
}

inline std::size_t random_dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Reduces any tensor-valued Var to a scalar through fixed random weights, so
/// every output entry contributes a distinct amount to the gradient.
inline Var weighted_total(Tape& tape, Var out, const Tensor& weights) {
  if (out.value().rank() == 0) return mul(out, tape.constant(weights));
  return sum(mul(out, tape.constant(weights)));
}

inline Tensor weights_like(const Tensor& t, Rng& rng) {
  if (t.rank() == 0) return Tensor::scalar(std::uniform_real_distribution<double>(0.5, 1.5)(rng));
  return random_tensor(t.shape(), rng, -1.5, 1.5);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace jsa::testing
