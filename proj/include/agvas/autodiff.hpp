#pragma once

// Recorded-graph reverse-mode differentiation over dense row-major matrices.
//
// A Tape owns every intermediate of one forward pass. Nodes are appended in
// creation order, which is also a valid topological order, so backward() is
// a single reverse sweep. Tensors are rank-2 throughout: vectors are 1 x n and
// scalars are 1 x 1.

#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "agvas/types.hpp"

namespace agvas {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A named trainable (or frozen) matrix owned by a model.
struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
  /// Whether decoupled weight decay applies (off for gains, biases, query tokens).
  bool decay = true;
};

/// Gradients keyed by parameter identity.
class GradStore {
 public:
  void add(const Parameter* p, const Matrix& g, double scale = 1.0);
  const Matrix* find(const Parameter& p) const;
  void merge(const GradStore& other);
  void clear() { grads_.clear(); }
  bool empty() const { return grads_.empty(); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::map<const Parameter*, Matrix> grads_;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  /// Called with the tape, the node's own id, and the node's gradient.
  using BackwardFn = std::function<void(Tape&, int self, const Matrix& out_grad)>;

  /// With record=false no backward closures are kept (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  /// Binds a parameter as a leaf. Each parameter is bound at most once per tape.
  Var param(const Parameter& p);

  const Matrix& value(Var v) const { return value(v.id); }
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  /// Gradient after backward(); nullptr when the node received none.
  const Matrix* grad(Var v) const;
  bool requires_grad(Var v) const { return requires_grad(v.id); }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. A tape can be swept once.
  void backward(Var loss);
  /// Adds `scale` times every bound parameter's gradient into `store`.
  void collect_param_grads(GradStore& store, double scale = 1.0) const;

  // Used by op implementations.
  Var push(Matrix value, bool requires_grad, BackwardFn fn);
  void accumulate(int id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g);
  bool needs_grad(Var v) const { return record_ && requires_grad(v); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::map<const Parameter*, int> bound_;
};

template <typename Expr>
void Tape::accumulate_expr(int id, const Expr& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

namespace ad {

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Adds a 1 x n bias to every row.
Var add_row(Var a, Var bias);
/// Adds a constant (non-differentiable) matrix of the same shape.
Var add_constant(Var a, const Matrix& c);
/// Row-wise softmax; `mask` is an optional additive constant (use -inf to block).
Var softmax_rows(Var a, const Matrix* mask = nullptr);
Var sigmoid(Var a);
Var gelu(Var a);
Var log(Var a);
Var clamp(Var a, double lo, double hi);
Var sum(Var a);
Var mean(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, Index start, Index count);
Var slice_cols(Var a, Index start, Index count);
/// Row lookup into a table (embedding).
Var gather_rows(Var table, std::span<const int> ids);
/// Mean negative log-likelihood of `targets[i]` under softmax(logits.row(rows[i])).
Var cross_entropy_rows(Var logits, std::span<const int> rows, std::span<const int> targets);

}  // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(double s, Var a) { return ad::scale(a, s); }

}  // namespace agvas
