#include "jsa/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace jsa {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const RowMatrix>;
using MapMut = Eigen::Map<RowMatrix>;

MapConst as_matrix(const Tensor& t) { return MapConst(t.data().data(), t.rows(), t.cols()); }
MapMut as_matrix(Tensor& t) { return MapMut(t.data().data(), t.rows(), t.cols()); }

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_finite(const Tensor& t, OpKind kind) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite output from ") + std::string(op_name(kind)));
  }
}

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

// How a binary elementwise op lines up its operands.
enum class Broadcast { none, rhs_rows, lhs_rows };

bool is_row_vector(const Shape& s) { return s.size() == 1 || (s.size() == 2 && s[0] == 1); }

Broadcast binary_layout(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.rank() == 2 && is_row_vector(b.shape()) && b.size() == a.cols()) return Broadcast::rhs_rows;
  if (b.rank() == 2 && is_row_vector(a.shape()) && a.size() == b.cols()) return Broadcast::lhs_rows;
  shape_fail(kind, a.shape(), b.shape());
}

// Sums a [rows, n] gradient down to the shape of a broadcast row operand.
void accumulate_row_reduced(Tensor& dst, const Tensor& g) {
  const std::size_t n = dst.size();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto src = g.row(r);
    for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
  }
}

void accumulate(Tensor& dst, const Tensor& g) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

template <class Fn>
Var binary(OpKind kind, Var a, Var b, Fn&& fn) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast layout = binary_layout(kind, av, bv);
  const Tensor& big = layout == Broadcast::lhs_rows ? bv : av;
  Tensor out(big.shape(), std::vector<double>(big.size()));
  const std::size_t cols = big.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = layout == Broadcast::lhs_rows ? av[i % cols] : av[i];
    const double y = layout == Broadcast::rhs_rows ? bv[i % cols] : bv[i];
    out[i] = fn(x, y);
  }
  check_finite(out, kind);

  Tape::BackwardFn back = [kind, layout](Tape& t, std::size_t self) {
    const auto& in = t.node_inputs(self);
    const Tensor& g = t.node_grad(self);
    const Tensor& x = t.node_value(in[0]);
    const Tensor& y = t.node_value(in[1]);
    const std::size_t cols = g.cols();
    Tensor ga(g.shape(), std::vector<double>(g.size()));
    Tensor gb(g.shape(), std::vector<double>(g.size()));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xv = layout == Broadcast::lhs_rows ? x[i % cols] : x[i];
      const double yv = layout == Broadcast::rhs_rows ? y[i % cols] : y[i];
      switch (kind) {
        case OpKind::add: ga[i] = g[i]; gb[i] = g[i]; break;
        case OpKind::sub: ga[i] = g[i]; gb[i] = -g[i]; break;
        default: ga[i] = g[i] * yv; gb[i] = g[i] * xv; break;
      }
    }
    if (t.node_requires_grad(in[0])) {
      if (layout == Broadcast::lhs_rows) accumulate_row_reduced(t.grad_slot(in[0]), ga);
      else accumulate(t.grad_slot(in[0]), ga);
    }
    if (t.node_requires_grad(in[1])) {
      if (layout == Broadcast::rhs_rows) accumulate_row_reduced(t.grad_slot(in[1]), gb);
      else accumulate(t.grad_slot(in[1]), gb);
    }
  };
  return tape.record(kind, std::move(out), {a.id(), b.id()}, std::move(back));
}

// Elementwise unary op; `local` maps (input, output) to d output / d input.
template <class Fwd, class Local>
Var unary(OpKind kind, Var a, Fwd&& fwd, Local local) {
  const Tensor& av = a.value();
  Tensor out(av.shape(), std::vector<double>(av.size()));
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  check_finite(out, kind);
  Tape::BackwardFn back = [local](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    const Tensor& g = t.node_grad(self);
    const Tensor& x = t.node_value(in);
    const Tensor& y = t.node_value(self);
    Tensor& dst = t.grad_slot(in);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * local(x[i], y[i]);
  };
  return a.tape().record(kind, std::move(out), {a.id()}, std::move(back));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw ShapeError("tensors are limited to rank 2, got " + shape_string(shape_));
  if (product(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " elements");
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor take_rows(const Tensor& source, std::span<const std::size_t> rows) {
  const std::size_t c = source.cols();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    if (r >= source.rows()) throw ShapeError("take_rows: row index out of range");
    auto src = source.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor::matrix(rows.size(), c, std::move(out));
}

Tensor repeat_rows(const Tensor& source, std::size_t times) {
  std::vector<double> out;
  out.reserve(source.size() * times);
  for (std::size_t k = 0; k < times; ++k) out.insert(out.end(), source.values().begin(), source.values().end());
  return Tensor::matrix(source.rows() * times, source.cols(), std::move(out));
}

Tensor vstack(std::span<const Tensor> parts) {
  if (parts.empty()) return Tensor::matrix(0, 0, {});
  const std::size_t c = parts.front().cols();
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("vstack: column mismatch");
    rows += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return Tensor::matrix(rows, c, std::move(out));
}

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (params_.contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  Parameter p;
  p.grad = Tensor::zeros(init.shape());
  p.moment1 = Tensor::zeros(init.shape());
  p.moment2 = Tensor::zeros(init.shape());
  p.value = std::move(init);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) std::fill(p.grad.data().begin(), p.grad.data().end(), 0.0);
}

bool ParamStore::grads_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const auto& kv) { return kv.second.grad.all_finite(); });
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& [_, p] : params_)
    for (double g : p.grad.data()) s += g * g;
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(*this); }

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::sub: return "sub";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax: return "softmax";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::broadcast: return "broadcast";
    case OpKind::scale: return "scale";
    case OpKind::square: return "square";
    case OpKind::log_sigmoid: return "log_sigmoid";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::row_sum: return "row_sum";
    case OpKind::pick: return "pick";
  }
  return "unknown";
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamStore& store, const std::string& name) {
  Parameter& p = store.at(name);
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = record_;
  n.bound = &p;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  if (record_) {
    n.requires_grad =
        std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) { return nodes_[i].requires_grad; });
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_slot(std::size_t id) {
  Tensor& g = grads_[id];
  if (g.shape() != nodes_[id].value.shape() || g.size() != nodes_[id].value.size()) {
    g = Tensor::zeros(nodes_[id].value.shape());
  }
  return g;
}

const Tensor& Tape::grad(Var v) const {
  static thread_local Tensor empty;
  if (!consumed_) throw std::logic_error("grad() requested before backward()");
  const Tensor& g = grads_[v.id()];
  if (g.shape() == nodes_[v.id()].value.shape() && g.size() == nodes_[v.id()].value.size()) return g;
  empty = Tensor::zeros(nodes_[v.id()].value.shape());
  return empty;
}

void Tape::backward(Var root) {
  if (consumed_) throw std::logic_error("tape already consumed by a previous backward()");
  if (!root.shape().empty()) throw ShapeError("backward() root must be a scalar, got " + shape_string(root.shape()));
  consumed_ = true;
  grads_.assign(nodes_.size(), Tensor());
  if (!record_) return;
  grad_slot(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    const Tensor& g = grads_[i];
    if (!n.requires_grad || g.size() != n.value.size() || g.shape() != n.value.shape()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.bound) accumulate(n.bound->grad, g);
  }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) shape_fail(OpKind::matmul, av.shape(), bv.shape());
  Tensor out = Tensor::zeros({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  check_finite(out, OpKind::matmul);
  Tape::BackwardFn back = [](Tape& t, std::size_t self) {
    const auto& in = t.node_inputs(self);
    const Tensor& g = t.node_grad(self);
    if (t.node_requires_grad(in[0])) {
      as_matrix(t.grad_slot(in[0])).noalias() += as_matrix(g) * as_matrix(t.node_value(in[1])).transpose();
    }
    if (t.node_requires_grad(in[1])) {
      as_matrix(t.grad_slot(in[1])).noalias() += as_matrix(t.node_value(in[0])).transpose() * as_matrix(g);
    }
  };
  return a.tape().record(OpKind::matmul, std::move(out), {a.id(), b.id()}, std::move(back));
}

Var add(Var a, Var b) { return binary(OpKind::add, a, b, [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return binary(OpKind::sub, a, b, [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(OpKind::mul, a, b, [](double x, double y) { return x * y; }); }

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }

Var relu(Var a) {
  return unary(
      OpKind::relu, a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(
      OpKind::tanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(OpKind::sigmoid, a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a) {
  return unary(
      OpKind::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary(
      OpKind::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(Var a) {
  return unary(
      OpKind::square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var log_sigmoid(Var a) {
  // d/dx log sigmoid(x) = 1 - sigmoid(x) = sigmoid(-x)
  return unary(OpKind::log_sigmoid, a, stable_log_sigmoid, [](double x, double) { return stable_sigmoid(-x); });
}

Var scale(Var a, double factor) {
  return unary(
      OpKind::scale, a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  if (av.rank() == 0) throw ShapeError("softmax needs rank >= 1");
  Tensor out(av.shape(), std::vector<double>(av.size()));
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto x = av.row(r);
    auto y = out.row(r);
    const double m = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) z += (y[j] = std::exp(x[j] - m));
    for (double& v : y) v /= z;
  }
  check_finite(out, OpKind::softmax);
  Tape::BackwardFn back = [](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    const Tensor& g = t.node_grad(self);
    const Tensor& y = t.node_value(self);
    Tensor& dst = t.grad_slot(in);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      auto dr = dst.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < yr.size(); ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  };
  return a.tape().record(OpKind::softmax, std::move(out), {a.id()}, std::move(back));
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  if (av.rank() == 0) throw ShapeError("log_softmax needs rank >= 1");
  Tensor out(av.shape(), std::vector<double>(av.size()));
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto x = av.row(r);
    auto y = out.row(r);
    const double m = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (double v : x) z += std::exp(v - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] - lse;
  }
  check_finite(out, OpKind::log_softmax);
  Tape::BackwardFn back = [](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    const Tensor& g = t.node_grad(self);
    const Tensor& y = t.node_value(self);
    Tensor& dst = t.grad_slot(in);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      auto dr = dst.row(r);
      double gsum = 0.0;
      for (double v : gr) gsum += v;
      for (std::size_t j = 0; j < yr.size(); ++j) dr[j] += gr[j] - std::exp(yr[j]) * gsum;
    }
  };
  return a.tape().record(OpKind::log_softmax, std::move(out), {a.id()}, std::move(back));
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, OpKind::sum);
  Tape::BackwardFn back = [](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    const double g = t.node_grad(self)[0];
    for (double& d : t.grad_slot(in).data()) d += g;
  };
  return a.tape().record(OpKind::sum, std::move(out), {a.id()}, std::move(back));
}

Var mean(Var a) {
  const Tensor& av = a.value();
  if (av.size() == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : av.data()) s += v;
  const double n = static_cast<double>(av.size());
  Tensor out = Tensor::scalar(s / n);
  check_finite(out, OpKind::mean);
  Tape::BackwardFn back = [n](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    const double g = t.node_grad(self)[0] / n;
    for (double& d : t.grad_slot(in).data()) d += g;
  };
  return a.tape().record(OpKind::mean, std::move(out), {a.id()}, std::move(back));
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("row_sum expects rank 2, got " + shape_string(av.shape()));
  std::vector<double> out(av.rows(), 0.0);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (double v : av.row(r)) out[r] += v;
  Tensor t_out = Tensor::vector(std::move(out));
  check_finite(t_out, OpKind::row_sum);
  Tape::BackwardFn back = [](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    const Tensor& g = t.node_grad(self);
    Tensor& dst = t.grad_slot(in);
    for (std::size_t r = 0; r < dst.rows(); ++r)
      for (double& d : dst.row(r)) d += g[r];
  };
  return a.tape().record(OpKind::row_sum, std::move(t_out), {a.id()}, std::move(back));
}

Var pick(Var a, std::span<const std::size_t> index) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || index.size() != av.rows()) {
    throw ShapeError("pick: expected one index per row of " + shape_string(av.shape()));
  }
  std::vector<double> out(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    if (index[r] >= av.cols()) throw ShapeError("pick: index out of range");
    out[r] = av.at(r, index[r]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tape::BackwardFn back = [idx = std::move(idx)](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    const Tensor& g = t.node_grad(self);
    Tensor& dst = t.grad_slot(in);
    for (std::size_t r = 0; r < idx.size(); ++r) dst.at(r, idx[r]) += g[r];
  };
  return a.tape().record(OpKind::pick, Tensor::vector(std::move(out)), {a.id()}, std::move(back));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t rows = parts.front().value().rows();
  const bool rank1 = parts.front().value().rank() == 1;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() == 0 || v.rows() != rows || (v.rank() == 1) != rank1) {
      shape_fail(OpKind::concat, parts.front().shape(), v.shape());
    }
    offsets.push_back(cols);
    cols += v.cols();
    ids.push_back(p.id());
  }
  Tensor out = rank1 ? Tensor::zeros({cols}) : Tensor::zeros({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.row(r).begin(), v.cols(), out.row(r).begin() + offsets[k]);
  }
  Tape::BackwardFn back = [offsets](Tape& t, std::size_t self) {
    const auto& in = t.node_inputs(self);
    const Tensor& g = t.node_grad(self);
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (!t.node_requires_grad(in[k])) continue;
      Tensor& dst = t.grad_slot(in[k]);
      for (std::size_t r = 0; r < dst.rows(); ++r) {
        auto src = g.row(r).subspan(offsets[k], dst.cols());
        auto d = dst.row(r);
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += src[j];
      }
    }
  };
  return parts.front().tape().record(OpKind::concat, std::move(out), std::move(ids), std::move(back));
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (av.rank() == 0 || begin > end || end > av.cols()) {
    throw ShapeError("slice: columns [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     shape_string(av.shape()));
  }
  const std::size_t width = end - begin;
  Tensor out = av.rank() == 1 ? Tensor::zeros({width}) : Tensor::zeros({av.rows(), width});
  for (std::size_t r = 0; r < av.rows(); ++r) std::copy_n(av.row(r).begin() + begin, width, out.row(r).begin());
  Tape::BackwardFn back = [begin](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    const Tensor& g = t.node_grad(self);
    Tensor& dst = t.grad_slot(in);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto src = g.row(r);
      auto d = dst.row(r).subspan(begin, src.size());
      for (std::size_t j = 0; j < src.size(); ++j) d[j] += src[j];
    }
  };
  return a.tape().record(OpKind::slice, std::move(out), {a.id()}, std::move(back));
}

Var broadcast(Var a, std::size_t rows) {
  const Tensor& av = a.value();
  if (!is_row_vector(av.shape())) throw ShapeError("broadcast expects [n] or [1,n], got " + shape_string(av.shape()));
  Tensor out = repeat_rows(Tensor::matrix(1, av.size(), av.values()), rows);
  Tape::BackwardFn back = [](Tape& t, std::size_t self) {
    const std::size_t in = t.node_inputs(self)[0];
    accumulate_row_reduced(t.grad_slot(in), t.node_grad(self));
  };
  return a.tape().record(OpKind::broadcast, std::move(out), {a.id()}, std::move(back));
}

Var forward_op(OpKind kind, std::span<const Var> inputs) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(op_name(kind)) + " expects " + std::to_string(n) + " inputs");
    }
  };
  switch (kind) {
    case OpKind::matmul: arity(2); return matmul(inputs[0], inputs[1]);
    case OpKind::add: arity(2); return add(inputs[0], inputs[1]);
    case OpKind::sub: arity(2); return sub(inputs[0], inputs[1]);
    case OpKind::mul: arity(2); return mul(inputs[0], inputs[1]);
    case OpKind::relu: arity(1); return relu(inputs[0]);
    case OpKind::tanh: arity(1); return tanh(inputs[0]);
    case OpKind::sigmoid: arity(1); return sigmoid(inputs[0]);
    case OpKind::softmax: arity(1); return softmax(inputs[0]);
    case OpKind::log: arity(1); return log(inputs[0]);
    case OpKind::exp: arity(1); return exp(inputs[0]);
    case OpKind::sum: arity(1); return sum(inputs[0]);
    case OpKind::mean: arity(1); return mean(inputs[0]);
    case OpKind::square: arity(1); return square(inputs[0]);
    case OpKind::log_sigmoid: arity(1); return log_sigmoid(inputs[0]);
    case OpKind::log_softmax: arity(1); return log_softmax(inputs[0]);
    case OpKind::row_sum: arity(1); return row_sum(inputs[0]);
    case OpKind::concat: return concat(inputs);
    default:
      throw std::invalid_argument(std::string(op_name(kind)) + " needs extra arguments; call it directly");
  }
}

double finite_diff_check(const std::function<Var(Tape&)>& f, ParamStore& store, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  auto evaluate = [&] {
    Tape t(false);
    return f(t).value().item();
  };
  if (evaluate() != evaluate()) throw std::logic_error("finite_diff_check: f is not deterministic");

  std::map<std::string, Tensor> saved;
  for (auto& [name, p] : store) {
    saved[name] = p.grad;
    std::fill(p.grad.data().begin(), p.grad.data().end(), 0.0);
  }
  {
    Tape t;
    t.backward(f(t));
  }

  double worst = 0.0;
  for (auto& [name, p] : store) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      auto at = [&](double offset) {
        p.value[i] = orig + offset;
        return evaluate();
      };
      const double fd = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
      p.value[i] = orig;
      worst = std::max(worst, std::abs(p.grad[i] - fd) / (std::max(std::abs(p.grad[i]), std::abs(fd)) + 1e-6));
    }
    p.grad = saved[name];
  }
  return worst;
}

}  // namespace jsa
