#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace jsa {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Thrown when operand shapes are incompatible for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles with rank 0, 1 or 2.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Matrix view: rank 0 is 1x1, rank 1 is a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  double item() const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{0};
  std::vector<double> data_;
};

/// Gathers the given rows of a rank-2 tensor, in order.
Tensor take_rows(const Tensor& source, std::span<const std::size_t> rows);
/// Stacks `times` copies of a rank-2 tensor vertically.
Tensor repeat_rows(const Tensor& source, std::size_t times);
Tensor vstack(std::span<const Tensor> parts);

/// A trainable parameter: value, gradient accumulator, and optimizer moments.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor moment1;
  Tensor moment2;
};

/// Named, ordered collection of parameters. Gradients accumulate until
/// zero_grad() is called.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }
  std::size_t size() const { return params_.size(); }
  std::vector<std::string> names() const;

  void zero_grad();
  bool grads_finite() const;
  double grad_norm() const;
  /// Number of optimizer steps taken so far (Adam bias correction).
  std::uint64_t step_count = 0;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind {
  leaf,
  matmul,
  add,
  mul,
  sub,
  relu,
  tanh,
  sigmoid,
  softmax,
  log,
  exp,
  sum,
  mean,
  concat,
  slice,
  broadcast,
  scale,
  square,
  log_sigmoid,
  log_softmax,
  row_sum,
  pick,
};

std::string_view op_name(OpKind kind);

/// Records operations for a single reverse sweep.
///
/// Nodes are appended in evaluation order, so the recording is already a
/// topological order and backward() walks it in reverse. A tape constructed
/// with record = false still computes values but stores no backward
/// closures; it is the evaluation-only path.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Differentiable input that is not part of a ParamStore.
  Var leaf(Tensor value);
  /// Leaf bound to a stored parameter; backward() adds into its grad.
  Var param(ParamStore& store, const std::string& name);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient of the last backward root with respect to v.
  const Tensor& grad(Var v) const;

  /// Reverse sweep from a scalar root. The tape may be swept only once.
  void backward(Var root);
  bool consumed() const { return consumed_; }

  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  // Backward-closure helpers.
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& node_grad(std::size_t id) const { return grads_[id]; }
  bool node_requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& node_inputs(std::size_t id) const { return nodes_[id].inputs; }
  /// Accumulator for a node's gradient, allocated on first use.
  Tensor& grad_slot(std::size_t id);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* bound = nullptr;
  };

  bool record_;
  bool consumed_ = false;
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Differentiable operations. Binary elementwise ops accept equal shapes or a
// rank-1 (or 1xN) operand broadcast over the rows of a rank-2 operand.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax(Var a);  // over the last axis
Var log(Var a);
Var exp(Var a);
Var sum(Var a);   // to a scalar
Var mean(Var a);  // to a scalar
Var concat(std::span<const Var> parts);  // along the last axis
Var concat(std::initializer_list<Var> parts);
Var slice(Var a, std::size_t begin, std::size_t end);  // columns [begin, end)
Var broadcast(Var a, std::size_t rows);  // [n] or [1,n] -> [rows,n]
Var scale(Var a, double factor);
Var square(Var a);
Var log_sigmoid(Var a);
Var log_softmax(Var a);  // over the last axis
Var row_sum(Var a);      // [B,n] -> [B]
/// out[b] = a[b, index[b]].
Var pick(Var a, std::span<const std::size_t> index);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);

/// Generic dispatch for the fixed-arity op kinds.
Var forward_op(OpKind kind, std::span<const Var> inputs);

/// Largest relative error |g_tape - g_fd| / (max(|g_tape|, |g_fd|) + 1e-6) over every entry of
/// every parameter in `store`, using the five-point central stencil with step eps.
/// Throws std::logic_error if f is not deterministic.
double finite_diff_check(const std::function<Var(Tape&)>& f, ParamStore& store, double eps = 1e-5);

}  // namespace jsa
