#pragma once

// Shared helpers for the unit tests: seeded generators, finite-difference
// checking over tape ops, and a small fully composed model.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "agvas/autodiff.hpp"
#include "agvas/model.hpp"
#include "agvas/types.hpp"

namespace agvas::testing {

using Gen = std::mt19937_64;

inline Matrix random_matrix(Index rows, Index cols, Gen& g, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(g);
  return m;
}

inline Index random_extent(Gen& g, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(g);
}

inline Mask random_mask(Index rows, Index cols, Gen& g, double p = 0.5) {
  std::bernoulli_distribution d(p);
  Mask m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(g) ? 1 : 0;
  return m;
}

/// Gradients smaller than this are compared absolutely rather than relatively.
inline constexpr double kGradFloor = 1e-3;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Max relative error between backward() and central differences (step h)
/// over every entry of every input.
inline double gradcheck(const TapeFn& f, std::vector<Matrix> inputs, double h = 1e-3) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (const Var& v : vars) {
      const Matrix* g = tape.grad(v);
      analytic.push_back(g ? *g : Matrix::Zero(v.rows(), v.cols()));
    }
  }
  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& m : xs) vars.push_back(tape.constant(m));
    return f(tape, vars).value()(0, 0);
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k].data()[i];
      inputs[k].data()[i] = x0 + h;
      const double up = eval(inputs);
      inputs[k].data()[i] = x0 - h;
      const double down = eval(inputs);
      inputs[k].data()[i] = x0;
      worst = std::max(worst, relative_error(analytic[k].data()[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

/// Weighted sum so that every output entry gets a distinct upstream gradient.
inline Var probe(Tape& tape, Var y, std::uint64_t seed = 99) {
  Gen g(seed);
  Var w = tape.constant(random_matrix(y.rows(), y.cols(), g));
  return ad::sum(ad::mul(y, w));
}

inline Vocabulary tiny_vocabulary() {
  const std::vector<std::string> corpus = {"Please segment the anomalies in this image.", "Sure, it is",
                                           "No anomalies are found."};
  return Vocabulary::build(corpus);
}

/// Every module at toy width: 16x16 images, 4x4 grids, width 8.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.encoder.image_size = 16;
  c.encoder.semantic_grid = 4;
  c.encoder.semantic_dim = 6;
  c.encoder.pixel_grid = 4;
  c.encoder.pixel_dim = 8;
  c.lm.dim = 8;
  c.lm.layers = 2;
  c.lm.heads = 2;
  c.lm.ffn_hidden = 16;
  c.lm.context = 64;
  c.decoder.dim = 8;
  c.decoder.blocks = 2;
  c.decoder.heads = 2;
  c.decoder.mlp_hidden = 16;
  c.decoder.neck_hidden = 16;
  c.decoder.grid = 4;
  c.decoder.image_size = 16;
  c.refiner_hidden = 8;
  c.spam_heads = 2;
  c.adapter_rank = 2;
  c.adapter_alpha = 4.0;
  return c;
}

inline Image random_image(Index size, Gen& g) { return random_matrix(size, size, g, 0.0, 1.0); }

}  // namespace agvas::testing

namespace agvas::testing {

struct ParamCheck {
  std::string name;
  Index entries = 0;
  double max_abs_err = 0.0;
  double max_grad = 0.0;
  /// max |analytic - numeric| over the tensor divided by its largest gradient
  /// magnitude. Tensors with (analytically) zero gradient, such as key biases
  /// under softmax shift invariance, are compared against a 1e-6 floor.
  double rel() const { return max_abs_err / std::max(max_grad, 1e-6); }
};

/// Central differences of the full training loss for every trainable
/// parameter. `stride` > 1 checks every stride-th entry (offset varies per
/// parameter) for large models; tensors with at most `full_below` entries are
/// still checked entry by entry.
inline std::vector<ParamCheck> model_gradcheck(AgVasModel& model, const ImageFeatures& f, const EncodedSample& s,
                                               const LossConfig& cfg, Index stride = 1, double h = 1e-3,
                                               Index full_below = 0) {
  GradStore grads;
  {
    Tape tape;
    auto parts = model.loss(tape, f, s, cfg);
    tape.backward(parts.total);
    tape.collect_param_grads(grads);
  }
  auto eval = [&] {
    Tape tape(false);
    return model.loss(tape, f, s, cfg).total.value()(0, 0);
  };
  std::vector<ParamCheck> out;
  Index k = 0;
  for (Parameter* p : model.parameters()) {
    ++k;
    if (!p->trainable) continue;
    ParamCheck pc{p->name};
    const Matrix* g = grads.find(*p);
    const Index step = p->value.size() <= full_below ? 1 : stride;
    for (Index i = (step > 1 ? k % step : 0); i < p->value.size(); i += step) {
      double& x = p->value.data()[i];
      const double x0 = x;
      x = x0 + h;
      const double up = eval();
      x = x0 - h;
      const double down = eval();
      x = x0;
      const double a = g ? g->data()[i] : 0.0;
      const double n = (up - down) / (2 * h);
      pc.max_abs_err = std::max(pc.max_abs_err, std::abs(a - n));
      pc.max_grad = std::max({pc.max_grad, std::abs(a), std::abs(n)});
      ++pc.entries;
    }
    out.push_back(pc);
  }
  return out;
}

}  // namespace agvas::testing
