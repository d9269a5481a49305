#include "jsa/sa_mis.hpp"

#include <cmath>
#include <limits>

namespace jsa {

void SAConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("sa." + key + ": " + why);
  };
  if (!(base_rate >= 0.0) || !std::isfinite(base_rate)) fail("rate", "must be finite and >= 0");
  if (moves < 1) fail("moves", "must be >= 1");
  if (schedule == ScheduleKind::constant_then_inverse_t && switch_iteration < 1) fail("switch", "must be >= 1");
  if (schedule == ScheduleKind::exponential_decay) {
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) fail("decay_rate", "must lie in (0, 1]");
    if (decay_interval < 1) fail("decay_interval", "must be >= 1");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon", "must be > 0");
}

double lr_schedule(const SAConfig& c, std::uint64_t t) {
  if (t < 1) throw std::invalid_argument("lr_schedule: t must be >= 1");
  switch (c.schedule) {
    case ScheduleKind::constant: return c.base_rate;
    case ScheduleKind::constant_then_inverse_t:
      if (t <= c.switch_iteration) return c.base_rate;
      return c.base_rate * static_cast<double>(c.switch_iteration) / static_cast<double>(t);
    case ScheduleKind::exponential_decay: {
      if (t <= c.switch_iteration) return c.base_rate;
      const auto periods = (t - c.switch_iteration) / c.decay_interval;
      return c.base_rate * std::pow(c.decay_rate, static_cast<double>(periods));
    }
  }
  return c.base_rate;
}

void AcceptanceStats::merge(const AcceptanceStats& other) {
  proposals += other.proposals;
  accepts += other.accepts;
  numeric_rejects += other.numeric_rejects;
}

std::vector<double> log_importance_weights(const Tensor& x, const LatentBatch& z, bool labels_clamped,
                                           GenerativeModel& gen, InferenceModel& inf) {
  const bool include_label = gen.latent_spec().has_classes() && !labels_clamped;
  std::vector<double> lw(x.rows(), -std::numeric_limits<double>::infinity());
  try {
    std::vector<double> lj = log_joint_values(gen, x, z);
    std::vector<double> lq = inf.proposal_log_density(x, z, include_label);
    for (std::size_t r = 0; r < lw.size(); ++r) lw[r] = lj[r] - lq[r];
  } catch (const NumericError&) {
    // every row keeps -inf and is treated as a numeric reject by callers
  }
  return lw;
}

ChainBatch start_chains(const Tensor& x, std::vector<std::size_t> clamped_labels, GenerativeModel& gen,
                        InferenceModel& inf, Rng& rng) {
  ChainBatch c;
  c.x = x;
  c.clamped_labels = std::move(clamped_labels);
  Proposal p = inf.propose(x, c.labels_clamped() ? &c.clamped_labels : nullptr, rng);
  c.z = std::move(p.z);
  c.log_weight.assign(x.rows(), -std::numeric_limits<double>::infinity());
  try {
    std::vector<double> lj = log_joint_values(gen, x, c.z);
    for (std::size_t r = 0; r < x.rows(); ++r) c.log_weight[r] = lj[r] - p.log_q[r];
  } catch (const NumericError&) {
  }
  return c;
}

void refresh_weights(ChainBatch& chains, GenerativeModel& gen, InferenceModel& inf) {
  chains.log_weight = log_importance_weights(chains.x, chains.z, chains.labels_clamped(), gen, inf);
}

void mis_transition(ChainBatch& chains, GenerativeModel& gen, InferenceModel& inf, Rng& rng,
                    AcceptanceStats& stats) {
  const std::size_t rows = chains.rows();
  Proposal p = inf.propose(chains.x, chains.labels_clamped() ? &chains.clamped_labels : nullptr, rng);
  std::vector<double> candidate(rows, -std::numeric_limits<double>::infinity());
  try {
    std::vector<double> lj = log_joint_values(gen, chains.x, p.z);
    for (std::size_t r = 0; r < rows; ++r) candidate[r] = lj[r] - p.log_q[r];
  } catch (const NumericError&) {
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double log_u = std::log(uniform01(rng));
    ++stats.proposals;
    if (!std::isfinite(candidate[r])) {
      ++stats.numeric_rejects;
      continue;
    }
    const double delta = candidate[r] - chains.log_weight[r];
    if (delta >= 0.0 || log_u < delta) {
      ++stats.accepts;
      chains.z.set_row(r, p.z.row(r));
      chains.log_weight[r] = candidate[r];
    }
  }
}

ChainState mis_transition(const ChainState& chain, const Tensor& x_row, GenerativeModel& gen, InferenceModel& inf,
                          Rng& rng, AcceptanceStats& stats) {
  const LatentSpec& spec = gen.latent_spec();
  ChainBatch c;
  c.x = x_row.rank() == 2 ? x_row : Tensor::matrix(1, x_row.size(), x_row.values());
  c.z = LatentBatch::empty(spec, 1);
  c.z.set_row(0, chain.sample);
  c.log_weight = {chain.log_weight};
  mis_transition(c, gen, inf, rng, stats);
  return {chain.index, c.z.row(0), c.log_weight[0]};
}

std::vector<LatentBatch> multi_move_sample(ChainBatch& chains, GenerativeModel& gen, InferenceModel& inf,
                                           std::size_t moves, std::size_t warmup, ChainPolicy policy, Rng& rng,
                                           AcceptanceStats& stats) {
  if (moves < 1) throw std::invalid_argument("multi_move_sample: moves must be >= 1");
  if (policy == ChainPolicy::restart) {
    chains = start_chains(chains.x, std::move(chains.clamped_labels), gen, inf, rng);
    for (std::size_t i = 0; i < warmup; ++i) mis_transition(chains, gen, inf, rng, stats);
  } else {
    refresh_weights(chains, gen, inf);
  }
  std::vector<LatentBatch> out;
  out.reserve(moves);
  for (std::size_t i = 0; i < moves; ++i) {
    mis_transition(chains, gen, inf, rng, stats);
    out.push_back(chains.z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ChainStore

ChainStore::ChainStore(LatentSpec spec, std::size_t size)
    : spec_(std::move(spec)), samples_(LatentBatch::empty(spec_, size)), initialized_(size, 0) {}

ChainBatch ChainStore::gather(std::span<const std::size_t> indices, const Tensor& x,
                              std::vector<std::size_t> clamped_labels, GenerativeModel& gen, InferenceModel& inf,
                              Rng& rng) const {
  ChainBatch c = start_chains(x, std::move(clamped_labels), gen, inf, rng);
  bool any_cached = false;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (!initialized_.at(indices[r])) continue;
    LatentValue v = samples_.row(indices[r]);
    if (c.labels_clamped()) v.label = c.clamped_labels[r];
    c.z.set_row(r, v);
    any_cached = true;
  }
  if (any_cached) refresh_weights(c, gen, inf);
  return c;
}

void ChainStore::scatter(std::span<const std::size_t> indices, const ChainBatch& chains) {
  for (std::size_t r = 0; r < indices.size(); ++r) {
    samples_.set_row(indices[r], chains.z.row(r));
    initialized_.at(indices[r]) = 1;
  }
}

void ChainStore::restore(LatentBatch samples, std::vector<char> flags) {
  if (samples.rows() != flags.size()) throw std::invalid_argument("ChainStore::restore: size mismatch");
  samples_ = std::move(samples);
  initialized_ = std::move(flags);
}

// ---------------------------------------------------------------------------
// SA update

void sa_step(ParamStore& store, const SAConfig& config, std::uint64_t t) {
  if (!store.grads_finite()) throw NumericError("sa_step: non-finite update vector");
  const double gamma = lr_schedule(config, t);
  const bool adam = config.optimizer == OptimizerKind::adam;
  const std::uint64_t k = store.step_count + 1;
  const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(k));
  const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(k));

  struct Pending {
    Parameter* p;
    Tensor value, m1, m2;
  };
  std::vector<Pending> pending;
  pending.reserve(store.size());
  for (auto& [name, p] : store) {
    Pending next{&p, p.value, p.moment1, p.moment2};
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      if (adam) {
        next.m1[i] = config.adam_beta1 * p.moment1[i] + (1.0 - config.adam_beta1) * g;
        next.m2[i] = config.adam_beta2 * p.moment2[i] + (1.0 - config.adam_beta2) * g * g;
        next.value[i] += gamma * (next.m1[i] / c1) / (std::sqrt(next.m2[i] / c2) + config.adam_epsilon);
      } else {
        next.value[i] += gamma * g;
      }
    }
    if (!next.value.all_finite()) throw NumericError("sa_step: update of '" + name + "' is not finite");
    pending.push_back(std::move(next));
  }
  for (auto& n : pending) {
    n.p->value = std::move(n.value);
    n.p->moment1 = std::move(n.m1);
    n.p->moment2 = std::move(n.m2);
  }
  store.step_count = k;
}

// ---------------------------------------------------------------------------

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::constant_then_inverse_t: return "constant_then_inverse_t";
    case ScheduleKind::exponential_decay: return "exponential_decay";
  }
  return "?";
}

std::string to_string(ChainPolicy p) { return p == ChainPolicy::cached ? "cached" : "restart"; }

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sa: return "sa";
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

ScheduleKind parse_schedule(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "constant_then_inverse_t") return ScheduleKind::constant_then_inverse_t;
  if (s == "exponential_decay") return ScheduleKind::exponential_decay;
  throw std::invalid_argument("unknown schedule '" + s + "'");
}

ChainPolicy parse_chain_policy(const std::string& s) {
  if (s == "cached") return ChainPolicy::cached;
  if (s == "restart") return ChainPolicy::restart;
  throw std::invalid_argument("unknown chain policy '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sa") return OptimizerKind::sa;
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

}  // namespace jsa
