#include "agvas/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace agvas {

double ssim(const Image& a, const Image& b, const SsimOptions& opt) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("ssim: size mismatch");
  if (a.rows() < opt.window || a.cols() < opt.window) throw std::invalid_argument("ssim: image smaller than window");
  const double c1 = std::pow(0.01 * opt.dynamic_range, 2);
  const double c2 = std::pow(0.03 * opt.dynamic_range, 2);
  double total = 0.0;
  long windows = 0;
  for (Index r = 0; r + opt.window <= a.rows(); r += opt.stride) {
    for (Index c = 0; c + opt.window <= a.cols(); c += opt.stride) {
      const auto wa = a.block(r, c, opt.window, opt.window).array();
      const auto wb = b.block(r, c, opt.window, opt.window).array();
      const double ma = wa.mean();
      const double mb = wb.mean();
      const double va = (wa - ma).square().mean();
      const double vb = (wb - mb).square().mean();
      const double cov = ((wa - ma) * (wb - mb)).mean();
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

RowVector intensity_histogram(const Image& img, Index bins) {
  RowVector h = RowVector::Zero(bins);
  for (Index i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.data()[i], 0.0, 1.0);
    const Index bin = std::min<Index>(static_cast<Index>(v * static_cast<double>(bins)), bins - 1);
    h(bin) += 1.0;
  }
  return h / static_cast<double>(img.size());
}

double bhattacharyya_histograms(const RowVector& p, const RowVector& q) {
  if (p.size() != q.size()) throw std::invalid_argument("bhattacharyya: histogram sizes differ");
  const double coeff = (p.array() * q.array()).sqrt().sum();
  return -std::log(std::max(coeff, 1e-12));
}

double bhattacharyya(const Image& a, const Image& b, Index bins) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("bhattacharyya: size mismatch");
  return bhattacharyya_histograms(intensity_histogram(a, bins), intensity_histogram(b, bins));
}

double reference_score(const Image& query, const Image& candidate) {
  return ssim(query, candidate) - bhattacharyya(query, candidate);
}

std::size_t select_reference(const Image& query, std::span<const Image> pool) {
  if (pool.empty()) throw std::invalid_argument("select_reference: empty pool");
  std::size_t best = 0;
  double best_score = reference_score(query, pool[0]);
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const double s = reference_score(query, pool[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

}  // namespace agvas
