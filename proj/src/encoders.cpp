#include "agvas/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace agvas {

StubEncoders::StubEncoders(EncoderConfig cfg) : cfg_(cfg) {
  Rng rng(cfg_.seed);
  sem_proj_ = normal_matrix(kSemanticStats, cfg_.semantic_dim, 1.0, rng);
  sem_bias_ = normal_matrix(1, cfg_.semantic_dim, 0.5, rng);
  const Index block = cfg_.image_size / cfg_.pixel_grid;
  const Index channels = block * block + kContrastChannels;
  pix_proj_ = normal_matrix(channels, cfg_.pixel_dim, 1.0 / std::sqrt(static_cast<double>(channels)), rng);
}

void StubEncoders::check(const Image& img) const {
  if (img.rows() != cfg_.image_size || img.cols() != cfg_.image_size) {
    throw std::invalid_argument("encoder: expected " + std::to_string(cfg_.image_size) + "x" +
                                std::to_string(cfg_.image_size) + " image, got " + std::to_string(img.rows()) +
                                "x" + std::to_string(img.cols()));
  }
}

RowVector StubEncoders::lift_semantic(const RowVector& stats) const {
  RowVector s(kSemanticStats);
  // Centre and scale so typical textures land in O(1).
  s(0) = 4.0 * (stats(0) - 0.5);
  s(1) = 40.0 * stats(1);
  s(2) = 20.0 * stats(2);
  RowVector pre = s * sem_proj_ + sem_bias_;
  return pre.array().tanh();
}

FeatureMap StubEncoders::encode_semantic(const Image& img) const {
  check(img);
  const Index g = cfg_.semantic_grid;
  const Index p = cfg_.image_size / g;
  FeatureMap f{g, g, Matrix(g * g, cfg_.semantic_dim)};
  for (Index r = 0; r < g; ++r) {
    for (Index c = 0; c < g; ++c) {
      const auto patch = img.block(r * p, c * p, p, p);
      const double mean = patch.mean();
      const double var = (patch.array() - mean).square().mean();
      double energy = 0.0;
      for (Index y = 0; y < p; ++y) {
        for (Index x = 0; x < p; ++x) {
          if (x + 1 < p) energy += std::pow(patch(y, x + 1) - patch(y, x), 2);
          if (y + 1 < p) energy += std::pow(patch(y + 1, x) - patch(y, x), 2);
        }
      }
      energy /= static_cast<double>(2 * p * (p - 1));
      RowVector stats(kSemanticStats);
      stats << mean, var, energy;
      f.data.row(r * g + c) = lift_semantic(stats);
    }
  }
  return f;
}

FeatureMap StubEncoders::encode_pixel(const Image& img) const {
  check(img);
  const Index g = cfg_.pixel_grid;
  const Index p = cfg_.image_size / g;
  Matrix means(g, g);
  for (Index r = 0; r < g; ++r) {
    for (Index c = 0; c < g; ++c) means(r, c) = img.block(r * p, c * p, p, p).mean();
  }
  const Index channels = p * p + kContrastChannels;
  Matrix raw(g * g, channels);
  for (Index r = 0; r < g; ++r) {
    for (Index c = 0; c < g; ++c) {
      const Index r0 = std::max<Index>(r - 1, 0), r1 = std::min<Index>(r + 1, g - 1);
      const Index c0 = std::max<Index>(c - 1, 0), c1 = std::min<Index>(c + 1, g - 1);
      const double hood = means.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).mean();
      const auto patch = img.block(r * p, c * p, p, p);
      const double mean = means(r, c);
      const double sd = std::sqrt((patch.array() - mean).square().mean());
      auto row = raw.row(r * g + c);
      for (Index i = 0; i < p * p; ++i) row(i) = patch(i / p, i % p) - 0.5;
      row(p * p + 0) = 2.0 * (mean - hood);
      row(p * p + 1) = 2.0 * sd;
      row(p * p + 2) = 2.0 * (patch.maxCoeff() - hood);
      row(p * p + 3) = 2.0 * (patch.minCoeff() - hood);
    }
  }
  return FeatureMap{g, g, raw * pix_proj_};
}

std::vector<Index> StubEncoders::pixel_receptive_field(Index r, Index c) const {
  const Index g = cfg_.pixel_grid;
  std::vector<Index> out;
  for (Index rr = std::max<Index>(r - 1, 0); rr <= std::min<Index>(r + 1, g - 1); ++rr) {
    for (Index cc = std::max<Index>(c - 1, 0); cc <= std::min<Index>(c + 1, g - 1); ++cc) {
      out.push_back(rr * g + cc);
    }
  }
  return out;
}

Var FeatureProjection::forward(Tape& tape, const FeatureMap& f) const {
  return linear_.forward(tape, tape.constant(f.data));
}

}  // namespace agvas
