#include "agvas/autodiff.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "agvas/kernels.hpp"

namespace agvas {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

void GradStore::add(const Parameter* p, const Matrix& g, double scale) {
  auto it = grads_.find(p);
  if (it == grads_.end()) {
    grads_.emplace(p, scale == 1.0 ? g : Matrix(scale * g));
  } else {
    it->second += scale * g;
  }
}

const Matrix* GradStore::find(const Parameter& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

void GradStore::merge(const GradStore& other) {
  for (const auto& [p, g] : other.grads_) add(p, g);
}

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::push(Matrix value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::param(const Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return Var{this, it->second};
  Var v = push(p.value, p.trainable, nullptr);
  bound_.emplace(&p, v.id);
  return v;
}

const Matrix* Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  return n.grad.size() == 0 ? nullptr : &n.grad;
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(Var loss) {
  if (!record_) throw GraphError("backward: tape was not recording");
  if (consumed_) throw GraphError("backward: graph already consumed");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw GraphError("backward: loss must be scalar, got " + shape_str(lv));
  }
  consumed_ = true;
  if (!requires_grad(loss)) return;
  nodes_[static_cast<std::size_t>(loss.id)].grad = Matrix::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    // The closure may touch other nodes; hold our grad by value.
    const Matrix g = n.grad;
    n.backward(*this, id, g);
  }
}

void Tape::collect_param_grads(GradStore& store, double scale) const {
  for (const auto& [p, id] : bound_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.requires_grad && n.grad.size() != 0) store.add(p, n.grad, scale);
  }
}

namespace ad {

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw GraphError("operands live on different tapes");
  return *a.tape;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_str(av) + " * " + shape_str(bv));
  }
  Matrix out = av * bv;
  const bool rg = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& tp, int, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate_expr(a.id, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate_expr(b.id, tp.value(a).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: inner extents differ " + shape_str(av) + " * " + shape_str(bv) + "^T");
  }
  Matrix out = av * bv.transpose();
  const bool rg = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& tp, int, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate_expr(a.id, g * tp.value(b));
    if (tp.requires_grad(b)) tp.accumulate_expr(b.id, g.transpose() * tp.value(a));
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().transpose();
  return t.push(std::move(out), t.needs_grad(a),
                [a](Tape& tp, int, const Matrix& g) { tp.accumulate_expr(a.id, g.transpose()); });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Matrix out = a.value() + b.value();
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, int, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Matrix out = a.value() - b.value();
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, int, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate_expr(b.id, -g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, int, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate_expr(a.id, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate_expr(b.id, g.cwiseProduct(tp.value(a)));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = s * a.value();
  return t.push(std::move(out), t.needs_grad(a),
                [a, s](Tape& tp, int, const Matrix& g) { tp.accumulate_expr(a.id, s * g); });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value().array() + s;
  return t.push(std::move(out), t.needs_grad(a),
                [a](Tape& tp, int, const Matrix& g) { tp.accumulate(a.id, g); });
}

Var add_row(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != a.cols()) {
    throw ShapeError("add_row: bias " + shape_str(bv) + " does not match " + shape_str(a.value()));
  }
  Matrix out = a.value().rowwise() + bv.row(0);
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(bias),
                [a, bias](Tape& tp, int, const Matrix& g) {
                  tp.accumulate(a.id, g);
                  if (tp.requires_grad(bias)) tp.accumulate_expr(bias.id, g.colwise().sum());
                });
}

Var add_constant(Var a, const Matrix& c) {
  Tape& t = *a.tape;
  require_same_shape("add_constant", a.value(), c);
  Matrix out = a.value() + c;
  return t.push(std::move(out), t.needs_grad(a),
                [a](Tape& tp, int, const Matrix& g) { tp.accumulate(a.id, g); });
}

Var softmax_rows(Var a, const Matrix* mask) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  if (av.hasNaN()) throw NumericError("softmax_rows: NaN input");
  Matrix out;
  if (mask) {
    require_same_shape("softmax_rows mask", av, *mask);
    out = kernels::softmax_rows(av + *mask);
  } else {
    out = kernels::softmax_rows(av);
  }
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int self, const Matrix& g) {
    const Matrix& y = tp.value(self);
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    tp.accumulate_expr(a.id, y.cwiseProduct(g.colwise() - dots));
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix out = kernels::sigmoid(a.value());
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int self, const Matrix& g) {
    const Matrix& y = tp.value(self);
    tp.accumulate_expr(a.id, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().unaryExpr([](double v) { return kernels::gelu(v); });
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int, const Matrix& g) {
    tp.accumulate_expr(a.id,
                       g.cwiseProduct(tp.value(a).unaryExpr([](double v) { return kernels::gelu_derivative(v); })));
  });
}

Var log(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().log();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int, const Matrix& g) {
    tp.accumulate_expr(a.id, g.cwiseQuotient(tp.value(a)));
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.push(std::move(out), t.needs_grad(a), [a, lo, hi](Tape& tp, int, const Matrix& g) {
    const Matrix& x = tp.value(a);
    Matrix ga = g;
    for (Index i = 0; i < ga.size(); ++i) {
      const double v = x.data()[i];
      if (v < lo || v > hi) ga.data()[i] = 0.0;
    }
    tp.accumulate(a.id, ga);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int, const Matrix& g) {
    const Matrix& x = tp.value(a);
    tp.accumulate_expr(a.id, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  tape_of(x, bias);
  const Index d = x.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw ShapeError("layer_norm: gain/bias width does not match " + shape_str(x.value()));
  }
  Matrix xhat;
  RowVector inv_std;
  Matrix out = kernels::layer_norm_rows(x.value(), gain.value(), bias.value(), eps, &xhat, &inv_std);
  const bool rg = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
  return t.push(std::move(out), rg,
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int,
                                                                                     const Matrix& g) {
                  const Index n = xhat.cols();
                  if (tp.requires_grad(gain)) {
                    tp.accumulate_expr(gain.id, g.cwiseProduct(xhat).colwise().sum());
                  }
                  if (tp.requires_grad(bias)) tp.accumulate_expr(bias.id, g.colwise().sum());
                  if (tp.requires_grad(x)) {
                    const RowVector gv = tp.value(gain).reshaped().transpose();
                    Matrix dx(xhat.rows(), n);
                    for (Index r = 0; r < xhat.rows(); ++r) {
                      const RowVector gh = g.row(r).cwiseProduct(gv);
                      const double m1 = gh.mean();
                      const double m2 = gh.cwiseProduct(xhat.row(r)).mean();
                      dx.row(r) = inv_std(r) * (gh.array() - m1 - xhat.row(r).array() * m2);
                    }
                    tp.accumulate(x.id, dx);
                  }
                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  Tape& t = *parts.front().tape;
  const Index cols = parts.front().cols();
  Index rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape != &t) throw GraphError("concat_rows: parts on different tapes");
    if (p.cols() != cols) throw ShapeError("concat_rows: feature dims differ");
    rows += p.rows();
    rg = rg || t.needs_grad(p);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [ps = std::move(ps)](Tape& tp, int, const Matrix& g) {
    Index off = 0;
    for (const Var& p : ps) {
      const Index r = tp.value(p).rows();
      if (tp.requires_grad(p)) tp.accumulate_expr(p.id, g.middleRows(off, r));
      off += r;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  Tape& t = *parts.front().tape;
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape != &t) throw GraphError("concat_cols: parts on different tapes");
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
    rg = rg || t.needs_grad(p);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [ps = std::move(ps)](Tape& tp, int, const Matrix& g) {
    Index off = 0;
    for (const Var& p : ps) {
      const Index c = tp.value(p).cols();
      if (tp.requires_grad(p)) tp.accumulate_expr(p.id, g.middleCols(off, c));
      off += c;
    }
  });
}

Var slice_rows(Var a, Index start, Index count) {
  Tape& t = *a.tape;
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return t.push(std::move(out), t.needs_grad(a), [a, start, count](Tape& tp, int, const Matrix& g) {
    const Matrix& x = tp.value(a);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    ga.middleRows(start, count) = g;
    tp.accumulate(a.id, ga);
  });
}

Var slice_cols(Var a, Index start, Index count) {
  Tape& t = *a.tape;
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), t.needs_grad(a), [a, start, count](Tape& tp, int, const Matrix& g) {
    const Matrix& x = tp.value(a);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    ga.middleCols(start, count) = g;
    tp.accumulate(a.id, ga);
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = *table.tape;
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw ShapeError("gather_rows: id out of range");
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return t.push(std::move(out), t.needs_grad(table), [table, idv = std::move(idv)](Tape& tp, int, const Matrix& g) {
    const Matrix& x = tp.value(table);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idv.size(); ++i) ga.row(idv[i]) += g.row(static_cast<Index>(i));
    tp.accumulate(table.id, ga);
  });
}

Var cross_entropy_rows(Var logits, std::span<const int> rows, std::span<const int> targets) {
  Tape& t = *logits.tape;
  if (rows.size() != targets.size()) throw ShapeError("cross_entropy_rows: rows/targets length differ");
  if (rows.empty()) throw ShapeError("cross_entropy_rows: empty supervised range");
  const Matrix& lv = logits.value();
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  Matrix probs(static_cast<Index>(rows.size()), lv.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= lv.rows()) throw ShapeError("cross_entropy_rows: row out of range");
    if (targets[i] < 0 || targets[i] >= lv.cols()) throw ShapeError("cross_entropy_rows: target out of vocab");
    const auto row = lv.row(rows[i]);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(targets[i]);
    probs.row(static_cast<Index>(i)) = (row.array() - lse).exp();
  }
  Matrix out(1, 1);
  out(0, 0) = total * inv_n;
  std::vector<int> rv(rows.begin(), rows.end());
  std::vector<int> tv(targets.begin(), targets.end());
  return t.push(std::move(out), t.needs_grad(logits),
                [logits, rv = std::move(rv), tv = std::move(tv), probs = std::move(probs), inv_n](
                    Tape& tp, int, const Matrix& g) {
                  const Matrix& x = tp.value(logits);
                  Matrix ga = Matrix::Zero(x.rows(), x.cols());
                  for (std::size_t i = 0; i < rv.size(); ++i) {
                    ga.row(rv[i]) += probs.row(static_cast<Index>(i));
                    ga(rv[i], tv[i]) -= 1.0;
                  }
                  ga *= g(0, 0) * inv_n;
                  tp.accumulate(logits.id, ga);
                });
}

}  // namespace ad
}  // namespace agvas
