#pragma once

// Brute-force reference implementations. They are deliberately slow and
// share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "agvas/metrics.hpp"
#include "agvas/similarity.hpp"
#include "agvas/types.hpp"

namespace agvas::oracle {

struct Counts {
  double tp = 0, fp = 0;
};

/// Predicted positive means score >= t; counted pixel by pixel.
inline Counts count_at(const std::vector<double>& s, const std::vector<std::uint8_t>& l, double t) {
  Counts c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] >= t) (l[i] ? c.tp : c.fp) += 1;
  }
  return c;
}

inline std::vector<double> thresholds_descending(const std::vector<double>& s) {
  std::set<double> u(s.begin(), s.end());
  return {u.rbegin(), u.rend()};
}

inline std::optional<double> average_precision(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double pos = 0;
  for (auto v : l) pos += v != 0;
  if (pos == 0) return std::nullopt;
  double ap = 0, prev_recall = 0;
  for (double t : thresholds_descending(s)) {
    const Counts c = count_at(s, l, t);
    const double recall = c.tp / pos;
    ap += (recall - prev_recall) * (c.tp / (c.tp + c.fp));
    prev_recall = recall;
  }
  return ap;
}

inline std::optional<double> f1_max(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double pos = 0;
  for (auto v : l) pos += v != 0;
  if (pos == 0) return std::nullopt;
  double best = 0;
  for (double t : thresholds_descending(s)) {
    const Counts c = count_at(s, l, t);
    if (c.tp == 0) continue;
    const double precision = c.tp / (c.tp + c.fp), recall = c.tp / pos;
    best = std::max(best, 2 * precision * recall / (precision + recall));
  }
  return best;
}

inline std::set<Index> pixel_set(const Mask& m) {
  std::set<Index> out;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (m(r, c)) out.insert(r * m.cols() + c);
    }
  }
  return out;
}

inline double iou_ano(const std::vector<EvalRecord>& records) {
  double total = 0;
  int n = 0;
  for (const auto& r : records) {
    if (!r.is_anomalous) continue;
    const auto a = pixel_set(r.pred), b = pixel_set(r.gt);
    std::vector<Index> inter, uni;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
    total += uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    ++n;
  }
  return total / n;
}

inline double iou_nor(const std::vector<EvalRecord>& records) {
  int empty = 0, n = 0;
  for (const auto& r : records) {
    if (r.is_anomalous) continue;
    ++n;
    empty += pixel_set(r.pred).empty();
  }
  return static_cast<double>(empty) / n;
}

/// Scores every candidate, then takes the first maximum.
inline std::size_t select_reference(const Image& q, const std::vector<Image>& pool) {
  std::vector<double> scores;
  for (const auto& p : pool) scores.push_back(ssim(q, p) - bhattacharyya(q, p));
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

/// Random 16x16 instance: quantised scores (so ties occur), a blob-ish
/// ground truth, and a thresholded prediction.
inline EvalRecord random_record(std::mt19937_64& g, bool anomalous, int levels = 20) {
  EvalRecord r;
  r.is_anomalous = anomalous;
  r.category = "c";
  std::uniform_int_distribution<int> lvl(0, levels);
  std::uniform_real_distribution<double> u(0, 1);
  r.score.resize(16, 16);
  r.gt = Mask::Zero(16, 16);
  if (anomalous) {
    std::uniform_int_distribution<int> pos(0, 12), ext(1, 8);
    const int r0 = pos(g), c0 = pos(g), h = ext(g), w = ext(g);
    r.gt.block(r0, c0, std::min(h, 16 - r0), std::min(w, 16 - c0)).setOnes();
  }
  const double bias = u(g) * 0.5;
  for (Index i = 0; i < 256; ++i) {
    double s = static_cast<double>(lvl(g)) / levels;
    if (r.gt.data()[i]) s = std::min(1.0, s + bias);
    r.score.data()[i] = s;
  }
  const double t = u(g);
  r.pred.resize(16, 16);
  for (Index i = 0; i < 256; ++i) r.pred.data()[i] = r.score.data()[i] > t;
  return r;
}

}  // namespace agvas::oracle
