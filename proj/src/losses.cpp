#include "agvas/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace agvas {

void LossConfig::validate() const {
  if (lambda_bce < 0 || lambda_dice < 0) throw std::invalid_argument("loss weights must be nonnegative");
  if (!(bce_clamp > 0 && bce_clamp < 0.5)) throw std::invalid_argument("bce clamp must lie in (0, 0.5)");
  if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (!(dice_eps > 0)) throw std::invalid_argument("dice smoothing must be positive");
}

Var text_loss(Var logits, std::span<const int> rows, std::span<const int> targets) {
  if (rows.empty()) throw std::invalid_argument("text_loss: empty supervised range");
  return ad::cross_entropy_rows(logits, rows, targets);
}

Var bce_loss(Var p, const Matrix& target, double clamp) {
  const Matrix& pv = p.value();
  if (pv.rows() != target.rows() || pv.cols() != target.cols()) throw ShapeError("bce_loss: shape mismatch");
  const double n = static_cast<double>(pv.size());
  double total = 0.0;
  for (Index i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(pv.data()[i], clamp, 1.0 - clamp);
    const double m = target.data()[i];
    total -= m * std::log(q) + (1.0 - m) * std::log(1.0 - q);
  }
  Matrix out(1, 1);
  out(0, 0) = total / n;
  Tape& t = *p.tape;
  return t.push(std::move(out), t.needs_grad(p), [p, target, clamp, n](Tape& tp, int, const Matrix& g) {
    const Matrix& pv = tp.value(p);
    Matrix d(pv.rows(), pv.cols());
    for (Index i = 0; i < pv.size(); ++i) {
      const double x = pv.data()[i];
      if (x < clamp || x > 1.0 - clamp) {
        d.data()[i] = 0.0;
      } else {
        const double m = target.data()[i];
        d.data()[i] = (-m / x + (1.0 - m) / (1.0 - x)) / n;
      }
    }
    tp.accumulate_expr(p.id, g(0, 0) * d);
  });
}

Var dice_loss(Var p, const Matrix& target, double eps) {
  const Matrix& pv = p.value();
  if (pv.rows() != target.rows() || pv.cols() != target.cols()) throw ShapeError("dice_loss: shape mismatch");
  const double num = 2.0 * pv.cwiseProduct(target).sum() + eps;
  const double den = pv.sum() + target.sum() + eps;
  Matrix out(1, 1);
  out(0, 0) = 1.0 - num / den;
  Tape& t = *p.tape;
  return t.push(std::move(out), t.needs_grad(p), [p, target, num, den](Tape& tp, int, const Matrix& g) {
    // d/dp_i of -(num/den) = -(2 m_i den - num) / den^2
    const Matrix d = ((num - 2.0 * den * target.array()) / (den * den)).matrix();
    tp.accumulate_expr(p.id, g(0, 0) * d);
  });
}

SupervisionTriple SupervisionTriple::from_grid_mask(const Mask& grid_mask) {
  SupervisionTriple t;
  t.ano.resize(grid_mask.size(), 1);
  for (Index i = 0; i < grid_mask.size(); ++i) t.ano(i, 0) = grid_mask.data()[i] ? 1.0 : 0.0;
  t.seg = t.ano;
  t.nor = (1.0 - t.ano.array()).matrix();
  return t;
}

void SupervisionTriple::validate() const {
  if (seg.rows() != ano.rows() || nor.rows() != ano.rows() || seg.cols() != ano.cols() || nor.cols() != ano.cols()) {
    throw std::invalid_argument("supervision triple: shape mismatch");
  }
  for (Index i = 0; i < ano.size(); ++i) {
    if (nor.data()[i] != 1.0 - ano.data()[i]) throw std::invalid_argument("supervision triple: M_NOR != 1 - M_ANO");
    if (seg.data()[i] != ano.data()[i]) throw std::invalid_argument("supervision triple: M_SEG != M_ANO");
  }
}

double SegLossTerms::bce_sum() const {
  double s = 0.0;
  for (const Var& v : bce) {
    if (v.valid()) s += v.value()(0, 0);
  }
  return s;
}

double SegLossTerms::dice_sum() const {
  double s = 0.0;
  for (const Var& v : dice) {
    if (v.valid()) s += v.value()(0, 0);
  }
  return s;
}

SegLossTerms seg_loss(const AnchorGuidedDecoder::Heads& heads, const SupervisionTriple& gt, const LossConfig& cfg) {
  gt.validate();
  SegLossTerms out;
  const Var* maps[3] = {&heads.nor, &heads.ano, &heads.seg};
  const Matrix* targets[3] = {&gt.nor, &gt.ano, &gt.seg};
  for (int c = 0; c < 3; ++c) {
    if (!maps[c]->valid()) continue;
    out.bce[c] = bce_loss(*maps[c], *targets[c], cfg.bce_clamp);
    out.dice[c] = dice_loss(*maps[c], *targets[c], cfg.dice_eps);
    Var term = cfg.lambda_bce * out.bce[c] + cfg.lambda_dice * out.dice[c];
    out.total = out.total.valid() ? out.total + term : term;
  }
  if (!out.total.valid()) throw std::invalid_argument("seg_loss: decoder produced no maps");
  return out;
}

double total_loss(double text, double seg) {
  if (!std::isfinite(text) || !std::isfinite(seg)) {
    throw NumericError("total_loss: non-finite part (text " + std::to_string(text) + ", seg " + std::to_string(seg) +
                       ")");
  }
  return text + seg;
}

Var total_loss(Var text, Var seg) {
  total_loss(text.value()(0, 0), seg.value()(0, 0));
  return text + seg;
}

}  // namespace agvas
