#include "gradient_sweep.hpp"

#include "jsa/models.hpp"
#include "jsa/vae_baseline.hpp"
#include "test_util.hpp"

#include <functional>

namespace jsa::testing {

namespace {

using Builder = std::function<Var(Tape&, ParamStore&)>;

// Wraps a tensor-valued builder into a scalar with weights fixed per case.
// Smooth (recurrent) models use a wider step.
double check_weighted(const Builder& build, ParamStore& store, Rng& rng, double eps = 1e-5) {
  Tensor w;
  {
    Tape probe(false);
    w = weights_like(build(probe, store).value(), rng);
  }
  return finite_diff_check([&](Tape& t) { return weighted_total(t, build(t, store), w); }, store, eps);
}

struct OpCase {
  std::string name;
  // Fills the store with inputs "a" (and "b") and returns the op builder.
  std::function<Builder(ParamStore&, Rng&)> make;
};

Var pa(Tape& t, ParamStore& s) { return t.param(s, "a"); }
Var pb(Tape& t, ParamStore& s) { return t.param(s, "b"); }

std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  c.push_back({"matmul", [](ParamStore& s, Rng& rng) -> Builder {
                 const auto r = random_dim(rng), k = random_dim(rng), n = random_dim(rng);
                 s.add("a", random_tensor({r, k}, rng));
                 s.add("b", random_tensor({k, n}, rng));
                 return [](Tape& t, ParamStore& st) { return matmul(pa(t, st), pb(t, st)); };
               }});
  auto binary = [&](const std::string& name, Var (*op)(Var, Var), bool positive_b) {
    c.push_back({name, [op, positive_b](ParamStore& s, Rng& rng) -> Builder {
                   const auto r = random_dim(rng), n = random_dim(rng);
                   s.add("a", random_tensor({r, n}, rng));
                   const bool row = std::bernoulli_distribution(0.5)(rng);
                   const Shape bs = row ? Shape{n} : Shape{r, n};
                   s.add("b", positive_b ? random_tensor(bs, rng, 0.5, 2.0) : random_tensor(bs, rng));
                   return [op](Tape& t, ParamStore& st) { return op(pa(t, st), pb(t, st)); };
                 }});
  };
  binary("add", &add, false);
  binary("sub", &sub, false);
  binary("mul", &mul, false);
  auto unary = [&](const std::string& name, Var (*op)(Var), double lo, double hi, bool avoid_zero) {
    c.push_back({name, [=](ParamStore& s, Rng& rng) -> Builder {
                   const Shape shape{random_dim(rng), random_dim(rng)};
                   s.add("a", avoid_zero ? away_from_zero(shape, rng, 0.05, hi) : random_tensor(shape, rng, lo, hi));
                   return [op](Tape& t, ParamStore& st) { return op(pa(t, st)); };
                 }});
  };
  unary("relu", &relu, -1.0, 1.0, true);
  unary("tanh", &tanh, -2.0, 2.0, false);
  unary("sigmoid", &sigmoid, -4.0, 4.0, false);
  unary("softmax", &softmax, -3.0, 3.0, false);
  unary("log", &log, 0.3, 3.0, false);
  unary("exp", &exp, -2.0, 2.0, false);
  unary("sum", &sum, -1.0, 1.0, false);
  unary("mean", &mean, -1.0, 1.0, false);
  unary("square", &square, -2.0, 2.0, false);
  unary("log_sigmoid", &log_sigmoid, -6.0, 6.0, false);
  unary("log_softmax", &log_softmax, -3.0, 3.0, false);
  unary("row_sum", &row_sum, -1.0, 1.0, false);
  c.push_back({"scale", [](ParamStore& s, Rng& rng) -> Builder {
                 s.add("a", random_tensor({random_dim(rng), random_dim(rng)}, rng));
                 const double f = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
                 return [f](Tape& t, ParamStore& st) { return scale(pa(t, st), f); };
               }});
  c.push_back({"concat", [](ParamStore& s, Rng& rng) -> Builder {
                 const auto r = random_dim(rng);
                 s.add("a", random_tensor({r, random_dim(rng)}, rng));
                 s.add("b", random_tensor({r, random_dim(rng)}, rng));
                 return [](Tape& t, ParamStore& st) { return concat({pa(t, st), pb(t, st), pa(t, st)}); };
               }});
  c.push_back({"slice", [](ParamStore& s, Rng& rng) -> Builder {
                 const auto n = random_dim(rng, 2, 6);
                 s.add("a", random_tensor({random_dim(rng), n}, rng));
                 const auto b = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
                 const auto e = std::uniform_int_distribution<std::size_t>(b + 1, n)(rng);
                 return [b, e](Tape& t, ParamStore& st) { return slice(pa(t, st), b, e); };
               }});
  c.push_back({"broadcast", [](ParamStore& s, Rng& rng) -> Builder {
                 s.add("a", random_tensor({random_dim(rng)}, rng));
                 const auto rows = random_dim(rng);
                 return [rows](Tape& t, ParamStore& st) { return broadcast(pa(t, st), rows); };
               }});
  c.push_back({"pick", [](ParamStore& s, Rng& rng) -> Builder {
                 const auto r = random_dim(rng), n = random_dim(rng);
                 s.add("a", random_tensor({r, n}, rng));
                 std::vector<std::size_t> idx(r);
                 for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
                 return [idx](Tape& t, ParamStore& st) { return pick(pa(t, st), idx); };
               }});
  return c;
}

void jitter(ParamStore& store, Rng& rng, double amount = 0.1) {
  std::normal_distribution<double> n(0.0, amount);
  for (auto& [name, p] : store) {
    for (double& v : p.value.data()) v += n(rng);
  }
}

Tensor random_bits(std::size_t r, std::size_t n, Rng& rng) {
  Tensor t = Tensor::zeros({r, n});
  for (double& v : t.data()) v = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  return t;
}

Tensor random_tokens(std::size_t r, std::size_t len, std::size_t vocab, Rng& rng) {
  Tensor t = Tensor::zeros({r, len});
  for (double& v : t.data()) v = static_cast<double>(std::uniform_int_distribution<std::size_t>(0, vocab - 1)(rng));
  return t;
}

LatentSpec random_mixed_spec(Rng& rng, bool classes) {
  std::vector<LatentFactor> f;
  f.push_back({FactorKind::bernoulli, random_dim(rng, 1, 3), 0.5});
  f.push_back({FactorKind::gaussian, random_dim(rng, 1, 2), 0.5});
  if (classes) f.push_back({FactorKind::categorical, random_dim(rng, 2, 4), 0.5});
  return LatentSpec(f);
}

struct ModelCase {
  std::string name;
  std::function<double(Rng&)> run;  // worst relative error for one random case
};

std::vector<ModelCase> model_cases() {
  std::vector<ModelCase> c;
  c.push_back({"bernoulli_logit_log_prob", [](Rng& rng) {
                 ParamStore s;
                 const auto r = random_dim(rng), n = random_dim(rng);
                 s.add("a", random_tensor({r, n}, rng, -4.0, 4.0));
                 Tensor bits = random_bits(r, n, rng);
                 return check_weighted([bits](Tape& t, ParamStore& st) { return bernoulli_logit_log_prob(pa(t, st), bits); },
                                       s, rng);
               }});
  c.push_back({"diag_gaussian_log_prob", [](Rng& rng) {
                 ParamStore s;
                 const Shape sh{random_dim(rng), random_dim(rng)};
                 s.add("m", random_tensor(sh, rng));
                 s.add("lv", random_tensor(sh, rng, -1.0, 1.0));
                 s.add("x", random_tensor(sh, rng, -2.0, 2.0));
                 return check_weighted(
                     [](Tape& t, ParamStore& st) {
                       return diag_gaussian_log_prob(t.param(st, "m"), t.param(st, "lv"), t.param(st, "x"));
                     },
                     s, rng);
               }});
  c.push_back({"categorical_logit_log_prob", [](Rng& rng) {
                 ParamStore s;
                 const auto r = random_dim(rng), k = random_dim(rng, 2, 6);
                 s.add("a", random_tensor({r, k}, rng, -3.0, 3.0));
                 std::vector<std::size_t> y(r);
                 for (auto& v : y) v = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
                 return check_weighted([y](Tape& t, ParamStore& st) { return categorical_logit_log_prob(pa(t, st), y); },
                                       s, rng);
               }});
  c.push_back({"reparam_sample", [](Rng& rng) {
                 ParamStore s;
                 const Shape sh{random_dim(rng), random_dim(rng)};
                 s.add("m", random_tensor(sh, rng));
                 s.add("lv", random_tensor(sh, rng));
                 Tensor eps = random_tensor(sh, rng, -2.0, 2.0);
                 return check_weighted(
                     [eps](Tape& t, ParamStore& st) { return reparam_sample(t.param(st, "m"), t.param(st, "lv"), eps); }, s,
                     rng);
               }});
  c.push_back({"linear_gaussian_log_joint", [](Rng& rng) {
                 const auto rows = random_dim(rng), obs = random_dim(rng, 1, 4);
                 LinearGaussianDecoder gen(random_mixed_spec(rng, false), obs, 0.1 + uniform01(rng), rng);
                 jitter(gen.params(), rng);
                 Tensor x = random_tensor({rows, obs}, rng, -2.0, 2.0);
                 LatentBatch z = sample_prior(gen.latent_spec(), rows, rng);
                 return check_weighted([&](Tape& t, ParamStore&) { return log_joint(t, gen, x, z); }, gen.params(), rng,
                                       1e-3);
               }});
  for (auto obs_model : {ObservationModel::diag_gaussian, ObservationModel::bernoulli_pixel}) {
    const std::string tag = obs_model == ObservationModel::diag_gaussian ? "gaussian" : "bernoulli";
    c.push_back({"mlp_decoder_log_joint_" + tag, [obs_model](Rng& rng) {
                   const auto rows = random_dim(rng), obs = random_dim(rng, 1, 3);
                   MlpDecoder gen(random_mixed_spec(rng, true), obs, {random_dim(rng, 2, 5)}, obs_model, rng);
                   jitter(gen.params(), rng);
                   Tensor x = obs_model == ObservationModel::bernoulli_pixel ? random_bits(rows, obs, rng)
                                                                          : random_tensor({rows, obs}, rng);
                   LatentBatch z = sample_prior(gen.latent_spec(), rows, rng);
                   return check_weighted([&](Tape& t, ParamStore&) { return log_joint(t, gen, x, z); }, gen.params(),
                                         rng);
                 }});
  }
  c.push_back({"mlp_decoder_log_likelihood_at_latent", [](Rng& rng) {
                 const auto rows = random_dim(rng), obs = random_dim(rng, 1, 3), d = random_dim(rng, 1, 3);
                 MlpDecoder gen(LatentSpec::gaussian(d), obs, {random_dim(rng, 2, 5)}, ObservationModel::diag_gaussian,
                                rng);
                 Tensor x = random_tensor({rows, obs}, rng);
                 ParamStore h;
                 h.add("h", random_tensor({rows, d}, rng, -2.0, 2.0));
                 return check_weighted([&](Tape& t, ParamStore& st) { return gen.log_likelihood_at(t, x, t.param(st, "h")); },
                                       h, rng);
               }});
  c.push_back({"mlp_encoder_log_q", [](Rng& rng) {
                 const auto rows = random_dim(rng), obs = random_dim(rng, 1, 4);
                 MlpEncoder inf(random_mixed_spec(rng, true), obs, {random_dim(rng, 2, 5)}, rng);
                 jitter(inf.params(), rng);
                 Tensor x = random_tensor({rows, obs}, rng);
                 LatentBatch z = sample_prior(inf.latent_spec(), rows, rng);
                 const bool with_label = std::bernoulli_distribution(0.5)(rng);
                 return check_weighted([&](Tape& t, ParamStore&) { return inf.log_q(t, x, z, with_label); },
                                       inf.params(), rng);
               }});
  c.push_back({"seq_decoder_log_joint", [](Rng& rng) {
                 const auto rows = random_dim(rng, 1, 3);
                 const SequenceShape shape{random_dim(rng, 2, 4), 6};
                 SeqDecoder gen(LatentSpec::bernoulli(random_dim(rng, 1, 3)), shape, random_dim(rng, 2, 4),
                                random_dim(rng, 2, 4), rng);
                 jitter(gen.params(), rng);
                 Tensor x = random_tokens(rows, shape.length, shape.vocab, rng);
                 LatentBatch z = sample_prior(gen.latent_spec(), rows, rng);
                 return check_weighted([&](Tape& t, ParamStore&) { return log_joint(t, gen, x, z); }, gen.params(), rng,
                                       1e-3);
               }});
  c.push_back({"seq_encoder_log_q", [](Rng& rng) {
                 const auto rows = random_dim(rng, 1, 3);
                 const SequenceShape shape{random_dim(rng, 2, 4), 6};
                 SeqEncoder inf(LatentSpec::bernoulli(random_dim(rng, 1, 3)), shape, random_dim(rng, 2, 4),
                                random_dim(rng, 2, 4), rng);
                 jitter(inf.params(), rng);
                 Tensor x = random_tokens(rows, shape.length, shape.vocab, rng);
                 LatentBatch z = sample_prior(inf.latent_spec(), rows, rng);
                 return check_weighted([&](Tape& t, ParamStore&) { return inf.log_q(t, x, z, false); }, inf.params(),
                                       rng, 1e-3);
               }});
  c.push_back({"elbo_objective_frozen_noise", [](Rng& rng) {
                 const auto rows = random_dim(rng), obs = random_dim(rng, 1, 3), d = random_dim(rng, 1, 2);
                 MlpDecoder gen(LatentSpec::gaussian(d), obs, {random_dim(rng, 2, 4)}, ObservationModel::diag_gaussian,
                                rng);
                 MlpEncoder inf(LatentSpec::gaussian(d), obs, {random_dim(rng, 2, 4)}, rng);
                 jitter(gen.params(), rng);
                 jitter(inf.params(), rng);
                 Tensor x = random_tensor({rows, obs}, rng);
                 Tensor eps = random_tensor({rows, d}, rng, -2.0, 2.0);
                 auto f = [&](Tape& t) { return elbo_objective(t, x, gen, inf, eps); };
                 return std::max(finite_diff_check(f, gen.params()), finite_diff_check(f, inf.params()));
               }});
  return c;
}

}  // namespace

std::vector<SweepResult> op_gradient_sweep(std::size_t cases, std::uint64_t seed) {
  std::vector<SweepResult> out;
  Rng rng(seed);
  for (const auto& oc : op_cases()) {
    SweepResult r{oc.name, 0, 0.0};
    for (std::size_t i = 0; i < cases; ++i) {
      ParamStore s;
      Builder b = oc.make(s, rng);
      r.worst = std::max(r.worst, check_weighted(b, s, rng));
      ++r.cases;
    }
    out.push_back(r);
  }
  return out;
}

std::vector<SweepResult> model_gradient_sweep(std::size_t cases, std::uint64_t seed) {
  std::vector<SweepResult> out;
  Rng rng(seed);
  for (const auto& mc : model_cases()) {
    SweepResult r{mc.name, 0, 0.0};
    for (std::size_t i = 0; i < cases; ++i) {
      r.worst = std::max(r.worst, mc.run(rng));
      ++r.cases;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace jsa::testing
