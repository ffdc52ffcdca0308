#include "agvas/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace agvas {

void Schedule::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
  if (warmup_iters < 0 || total_iters < 1 || warmup_iters > total_iters) {
    throw std::invalid_argument("schedule needs 0 <= warmup_iters <= total_iters");
  }
}

double lr_at(int iter, const Schedule& s) {
  if (iter <= 0) return 0.0;
  if (iter < s.warmup_iters) return s.lr * static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
  if (iter >= s.total_iters) return 0.0;
  const double span = static_cast<double>(s.total_iters - s.warmup_iters);
  return s.lr * static_cast<double>(s.total_iters - iter) / span;
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  moments_.reserve(params_.size());
  for (const Parameter* p : params_) {
    moments_.push_back({Matrix::Zero(p->value.rows(), p->value.cols()), Matrix::Zero(p->value.rows(), p->value.cols())});
  }
}

void AdamW::step(const GradStore& grads, double lr) {
  for (const Parameter* p : params_) {
    const Matrix* g = grads.find(*p);
    if (g != nullptr && !g->allFinite()) throw NumericError("non-finite gradient for " + p->name);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.trainable) continue;
    const Matrix* g = grads.find(p);
    if (g == nullptr) continue;
    if (g->rows() != p.value.rows() || g->cols() != p.value.cols()) {
      throw ShapeError("gradient shape differs from parameter " + p.name);
    }
    Moments& mo = moments_[i];
    mo.m = cfg_.beta1 * mo.m + (1.0 - cfg_.beta1) * *g;
    mo.v = cfg_.beta2 * mo.v + (1.0 - cfg_.beta2) * g->cwiseProduct(*g);
    if (p.decay && cfg_.weight_decay != 0.0) p.value *= 1.0 - lr * cfg_.weight_decay;
    p.value.array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + cfg_.eps);
  }
}

}  // namespace agvas
