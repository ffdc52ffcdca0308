#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "agvas/autodiff.hpp"

namespace agvas {

using Rng = std::mt19937_64;

/// Gaussian-initialised matrix.
Matrix normal_matrix(Index rows, Index cols, double std_dev, Rng& rng);

/// Frozen base weight plus trainable factorised update `scale * down * up`.
/// `up` starts at zero so a fresh adapter leaves the layer unchanged.
struct LowRankAdapter {
  Parameter down;  // in x rank, random
  Parameter up;    // rank x out, zero
  double scale = 1.0;
};

class Linear {
 public:
  Linear() = default;
  /// Weights ~ N(0, init_std^2); init_std <= 0 selects 1/sqrt(in).
  Linear(std::string name, Index in, Index out, Rng& rng, double init_std = -1.0);

  /// x (n x in) -> n x out.
  Var forward(Tape& tape, Var x) const;

  /// Adds a rank-r adapter. Throws std::invalid_argument when rank >= min(in, out).
  void attach_adapter(Index rank, Rng& rng, double alpha);
  bool has_adapter() const { return adapter_.has_value(); }
  void set_base_trainable(bool trainable);

  Index in_features() const { return weight_.value.rows(); }
  Index out_features() const { return weight_.value.cols(); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }
  LowRankAdapter* adapter() { return adapter_ ? &*adapter_ : nullptr; }

  template <typename F>
  void visit(F&& f) {
    f(weight_);
    f(bias_);
    if (adapter_) {
      f(adapter_->down);
      f(adapter_->up);
    }
  }

 private:
  Parameter weight_;
  Parameter bias_;
  std::optional<LowRankAdapter> adapter_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::string name, Index dim);
  Var forward(Tape& tape, Var x) const;

  Parameter& gain() { return gain_; }
  Parameter& bias() { return bias_; }

  template <typename F>
  void visit(F&& f) {
    f(gain_);
    f(bias_);
  }

 private:
  Parameter gain_;
  Parameter bias_;
};

/// Multi-head scaled dot-product attention with separate query/key/value
/// inputs. Heads split the model width into contiguous column blocks.
class MultiHeadAttention {
 public:
  struct Output {
    Var out;                   // after output projection
    std::vector<Var> weights;  // per head, queries x keys
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Index dim, Index heads, Rng& rng);

  Output forward(Tape& tape, Var query, Var key, Var value, const Matrix* mask = nullptr) const;
  Var operator()(Tape& tape, Var query, Var key, Var value, const Matrix* mask = nullptr) const {
    return forward(tape, query, key, value, mask).out;
  }

  Index heads() const { return heads_; }
  Linear& q() { return q_; }
  Linear& k() { return k_; }
  Linear& v() { return v_; }
  Linear& o() { return o_; }

  template <typename F>
  void visit(F&& f) {
    q_.visit(f);
    k_.visit(f);
    v_.visit(f);
    o_.visit(f);
  }

 private:
  Index heads_ = 1;
  Linear q_, k_, v_, o_;
};

/// Two-layer GELU MLP.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(const std::string& name, Index dim, Index hidden, Rng& rng);
  Var forward(Tape& tape, Var x) const;

  Linear& up() { return up_; }
  Linear& down() { return down_; }

  template <typename F>
  void visit(F&& f) {
    up_.visit(f);
    down_.visit(f);
  }

 private:
  Linear up_, down_;
};

/// Sets every parameter reachable from `module` to zero.
template <typename Module>
void zero_parameters(Module& module) {
  module.visit([](Parameter& p) { p.value.setZero(); });
}

}  // namespace agvas
