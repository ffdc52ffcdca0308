#pragma once

#include <filesystem>
#include <span>

#include "agvas/types.hpp"

namespace agvas {

/// Rounds every value to the nearest k/255 so PGM export is lossless.
Image quantize_8bit(const Image& img);

/// Binary P5, maxval 255.
void write_pgm(const std::filesystem::path& path, const Image& img);
/// Mask written with values {0, 255}.
void write_mask_pgm(const std::filesystem::path& path, const Mask& mask);
Image read_pgm(const std::filesystem::path& path);
/// Any nonzero pixel becomes 1.
Mask read_mask_pgm(const std::filesystem::path& path);

/// Raw float64 sidecar: u32 rows, u32 cols, then rows*cols little-endian doubles.
void write_f64(const std::filesystem::path& path, const Matrix& m);
Matrix read_f64(const std::filesystem::path& path);

/// Block downsampling of a binary mask: a cell is 1 iff at least half of its
/// pixels are 1.
Mask downsample_mask(const Mask& mask, Index grid);

/// Flattens a grid row vector (1 x rows*cols) into a rows x cols matrix.
Matrix to_grid(const Matrix& flat, Index rows, Index cols);

/// Strict threshold: 1 where value > threshold.
template <typename Derived>
Mask threshold_strict(const Eigen::MatrixBase<Derived>& m, double threshold) {
  Mask out(m.rows(), m.cols());
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out(r, c) = m(r, c) > threshold ? 1 : 0;
  }
  return out;
}

}  // namespace agvas
