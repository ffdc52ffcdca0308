#pragma once

// Image similarity used to pick a normal reference for a query image.

#include <cstddef>
#include <span>

#include "agvas/types.hpp"

namespace agvas {

struct SsimOptions {
  Index window = 8;
  Index stride = 4;
  double dynamic_range = 1.0;
};

/// Mean local SSIM over sliding windows with C1 = (0.01 L)^2, C2 = (0.03 L)^2.
double ssim(const Image& a, const Image& b, const SsimOptions& opt = {});

/// Normalised intensity histogram over [0, 1].
RowVector intensity_histogram(const Image& img, Index bins = 32);

/// -ln sum_i sqrt(p_i q_i), coefficient clamped below at 1e-12.
double bhattacharyya_histograms(const RowVector& p, const RowVector& q);
double bhattacharyya(const Image& a, const Image& b, Index bins = 32);

/// Combined score used for retrieval: ssim - bhattacharyya.
double reference_score(const Image& query, const Image& candidate);

/// Index of the pool image maximising reference_score; ties go to the lowest
/// index. Throws std::invalid_argument on an empty pool.
std::size_t select_reference(const Image& query, std::span<const Image> pool);

}  // namespace agvas
