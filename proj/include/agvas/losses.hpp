#pragma once

// Autoregressive text loss, per-anchor BCE + Dice segmentation loss, and
// their sum.

#include <span>

#include "agvas/agmd.hpp"
#include "agvas/autodiff.hpp"

namespace agvas {

struct LossConfig {
  double lambda_bce = 0.5;
  double lambda_dice = 2.0;
  double alpha = 0.5;
  double dice_eps = 1.0;
  double bce_clamp = 1e-7;

  /// Throws std::invalid_argument on negative weights or a clamp outside (0, 0.5).
  void validate() const;
};

/// Mean NLL of `targets[i]` at logit row `rows[i]`. Throws on an empty range.
Var text_loss(Var logits, std::span<const int> rows, std::span<const int> targets);

/// Mean binary cross-entropy with P clamped to [clamp, 1-clamp].
Var bce_loss(Var p, const Matrix& target, double clamp = 1e-7);
/// 1 - (2 sum(P*M) + eps) / (sum(P) + sum(M) + eps).
Var dice_loss(Var p, const Matrix& target, double eps = 1.0);

/// Ground truth for the three anchors on the decoder grid, laid out like the
/// head outputs (one column, grid cells in row-major order).
struct SupervisionTriple {
  Matrix seg;
  Matrix nor;
  Matrix ano;

  /// Builds the triple from a decoder-grid anomaly mask.
  static SupervisionTriple from_grid_mask(const Mask& grid_mask);
  /// Throws std::invalid_argument unless nor == 1 - ano and seg == ano.
  void validate() const;
};

struct SegLossTerms {
  Var total;
  /// Unweighted parts per anchor in canonical order; invalid when the head is absent.
  Var bce[3];
  Var dice[3];

  double bce_sum() const;
  double dice_sum() const;
};

/// Sum over present heads c of lambda_bce*BCE(P_c, M_c) + lambda_dice*Dice(P_c, M_c).
SegLossTerms seg_loss(const AnchorGuidedDecoder::Heads& heads, const SupervisionTriple& gt, const LossConfig& cfg);

/// L_txt + L_seg. NaN or infinite parts are a hard failure (NumericError).
double total_loss(double text, double seg);
Var total_loss(Var text, Var seg);

}  // namespace agvas
