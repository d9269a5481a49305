#include "jsa/nn.hpp"

#include <cmath>
#include <sstream>

namespace jsa {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor w = Tensor::zeros({fan_in, fan_out});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

Dense::Dense(ParamStore& store, std::string prefix, std::size_t in, std::size_t out, Rng& rng)
    : weight_(prefix + ".w"), bias_(prefix + ".b"), in_(in), out_(out) {
  store.add(weight_, xavier_uniform(in, out, rng));
  store.add(bias_, Tensor::zeros({out}));
}

Var Dense::operator()(Tape& tape, ParamStore& store, Var x) const {
  return add(matmul(x, tape.param(store, weight_)), tape.param(store, bias_));
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, std::vector<std::size_t> widths, Activation hidden, Rng& rng)
    : widths_(std::move(widths)), hidden_(hidden) {
  if (widths_.size() < 2) throw std::invalid_argument("an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers_.emplace_back(store, prefix + ".l" + std::to_string(i), widths_[i], widths_[i + 1], rng);
  }
}

Var Mlp::operator()(Tape& tape, ParamStore& store, Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](tape, store, x);
    if (i + 1 < layers_.size()) x = activate(x, hidden_);
  }
  return x;
}

std::string Mlp::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < widths_.size(); ++i) os << (i ? "-" : "") << widths_[i];
  os << (hidden_ == Activation::relu ? "/relu" : hidden_ == Activation::tanh ? "/tanh" : "/linear");
  return os.str();
}

LstmCell::LstmCell(ParamStore& store, std::string prefix, std::size_t in, std::size_t hidden, Rng& rng)
    : weight_(prefix + ".w"), bias_(prefix + ".b"), in_(in), hidden_(hidden) {
  store.add(weight_, xavier_uniform(in + hidden, 4 * hidden, rng));
  store.add(bias_, Tensor::zeros({4 * hidden}));
}

LstmState LstmCell::zero_state(Tape& tape, std::size_t batch) const {
  return {tape.constant(Tensor::zeros({batch, hidden_})), tape.constant(Tensor::zeros({batch, hidden_}))};
}

LstmState lstm_step(Tape& tape, ParamStore& store, const LstmCell& cell, Var input, const LstmState& state) {
  const std::size_t n = cell.hidden();
  if (input.value().cols() != cell.in() || state.h.value().cols() != n || state.c.value().cols() != n) {
    throw ShapeError("lstm_step: input " + shape_string(input.shape()) + " / state " + shape_string(state.h.shape()) +
                     " do not match cell (" + std::to_string(cell.in()) + ", " + std::to_string(n) + ")");
  }
  Var gates = add(matmul(concat({input, state.h}), tape.param(store, cell.weight_name())),
                  tape.param(store, cell.bias_name()));
  Var i = sigmoid(slice(gates, 0, n));
  Var f = sigmoid(slice(gates, n, 2 * n));
  Var o = sigmoid(slice(gates, 2 * n, 3 * n));
  Var g = tanh(slice(gates, 3 * n, 4 * n));
  Var c = add(mul(f, state.c), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

}  // namespace jsa
