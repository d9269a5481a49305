#pragma once

#include "jsa/distributions.hpp"
#include "jsa/tensor.hpp"

#include <string>
#include <vector>

namespace jsa {

/// Uniform Xavier/Glorot initialisation: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

enum class Activation { relu, tanh, identity };

Var activate(Var x, Activation act);

/// Fully connected layer y = x W + b over a [B, in] batch.
class Dense {
 public:
  Dense() = default;
  Dense(ParamStore& store, std::string prefix, std::size_t in, std::size_t out, Rng& rng);

  Var operator()(Tape& tape, ParamStore& store, Var x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::string weight_;
  std::string bias_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

/// Stack of Dense layers; `hidden` activation between layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& prefix, std::vector<std::size_t> widths, Activation hidden, Rng& rng);

  Var operator()(Tape& tape, ParamStore& store, Var x) const;
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::string describe() const;

 private:
  std::vector<Dense> layers_;
  std::vector<std::size_t> widths_;
  Activation hidden_ = Activation::relu;
};

struct LstmState {
  Var h;
  Var c;
};

/// One LSTM layer. Gate pre-activations are [x, h] W + b with W of shape
/// [in + hidden, 4 * hidden], gate order (input, forget, output, candidate).
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParamStore& store, std::string prefix, std::size_t in, std::size_t hidden, Rng& rng);

  std::size_t in() const { return in_; }
  std::size_t hidden() const { return hidden_; }
  const std::string& weight_name() const { return weight_; }
  const std::string& bias_name() const { return bias_; }

  LstmState zero_state(Tape& tape, std::size_t batch) const;

 private:
  std::string weight_;
  std::string bias_;
  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
};

/// Standard LSTM recurrence; returns the new (h, c). The output is h.
LstmState lstm_step(Tape& tape, ParamStore& store, const LstmCell& cell, Var input, const LstmState& state);

}  // namespace jsa
