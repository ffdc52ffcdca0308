#pragma once

// Frozen stand-ins for the semantic and pixel image encoders, plus the
// trainable linear maps into the language-model width.

#include <cstdint>
#include <vector>

#include "agvas/nn.hpp"
#include "agvas/types.hpp"

namespace agvas {

struct FeatureMap {
  Index grid_rows = 0;
  Index grid_cols = 0;
  Matrix data;  // tokens x dim, token index = row * grid_cols + col

  Index tokens() const { return data.rows(); }
  Index dim() const { return data.cols(); }
};

struct EncoderConfig {
  Index image_size = 64;
  Index semantic_grid = 8;
  Index semantic_dim = 48;
  Index pixel_grid = 16;
  Index pixel_dim = 32;
  std::uint64_t seed = 0x5eedf00dULL;
};

/// Statistics per semantic patch: mean, variance, gradient energy.
inline constexpr Index kSemanticStats = 3;
/// Pixel patch channels: raw block pixels followed by four local-contrast channels.
inline constexpr Index kContrastChannels = 4;

class StubEncoders {
 public:
  explicit StubEncoders(EncoderConfig cfg = {});

  const EncoderConfig& config() const { return cfg_; }

  /// 8x8 grid: per-patch (mean, variance, gradient energy) lifted through a
  /// fixed random map and tanh.
  FeatureMap encode_semantic(const Image& img) const;
  /// 16x16 grid: raw patch pixels plus local-contrast channels through a fixed
  /// random linear map.
  FeatureMap encode_pixel(const Image& img) const;

  /// The fixed lift applied to one statistics vector (exposed for tests).
  RowVector lift_semantic(const RowVector& stats) const;
  /// Pixel patches whose features depend on pixel patch (r, c).
  std::vector<Index> pixel_receptive_field(Index r, Index c) const;

 private:
  void check(const Image& img) const;

  EncoderConfig cfg_;
  Matrix sem_proj_;  // stats x semantic_dim
  RowVector sem_bias_;
  Matrix pix_proj_;  // (block pixels + contrast) x pixel_dim
};

/// Trainable affine map of a feature map into the shared width.
class FeatureProjection {
 public:
  FeatureProjection() = default;
  FeatureProjection(const std::string& name, Index in, Index out, Rng& rng) : linear_(name, in, out, rng) {}

  /// tokens x in -> tokens x out; the grid is unchanged.
  Var forward(Tape& tape, const FeatureMap& f) const;

  Linear& linear() { return linear_; }
  template <typename F>
  void visit(F&& f) {
    linear_.visit(f);
  }

 private:
  Linear linear_;
};

}  // namespace agvas
