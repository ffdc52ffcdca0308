#pragma once

// Pixel-level AP and F1-Max, per-image IoU on anomalous images, empty-mask
// rate on normal images, and per-category aggregation.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agvas/types.hpp"

namespace agvas {

struct EvalRecord {
  std::string id;
  std::string category;
  bool is_anomalous = false;
  Matrix score;  // fused probability map
  Mask pred;     // binary prediction
  Mask gt;       // ground truth, all zero for normal images
};

/// Area under the step precision-recall curve over descending unique
/// thresholds (tied scores enter together). nullopt without positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Best F1 of the rule score >= t. Candidates are all unique scores when
/// there are at most `max_candidates`, otherwise that many quantiles.
std::optional<double> f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels,
                             std::size_t max_candidates = 4096);

struct IouSummary {
  double value = 0.0;
  std::size_t count = 0;
  /// Anomalous images where both prediction and ground truth are empty (scored 1).
  std::size_t empty_union = 0;
};

/// Mean |M n G| / |M u G| over anomalous records. Throws if there are none.
IouSummary iou_ano(std::span<const EvalRecord> records);
/// Fraction of normal records whose prediction is entirely empty. Throws if there are none.
IouSummary iou_nor(std::span<const EvalRecord> records);

struct CategoryMetrics {
  std::string category;
  std::optional<double> ap;
  std::optional<double> f1_max;
  std::optional<double> iou_ano;
  std::optional<double> iou_nor;
  std::size_t n_ano = 0;
  std::size_t n_nor = 0;
  std::size_t empty_union = 0;
};

struct MetricsReport {
  std::vector<CategoryMetrics> categories;  // sorted by name
  CategoryMetrics mean;                     // unweighted over categories
};

/// Pixels are pooled per category for AP and F1-Max. Throws on mixed map sizes.
MetricsReport evaluate_dataset(std::span<const EvalRecord> records);

std::string format_table(const MetricsReport& report);
std::string format_key_values(const MetricsReport& report);

/// "(51.0, 52.7, 44.8)": AP, F1-Max and IoU_ano in percent with one decimal.
std::string format_tuple(const std::array<double, 3>& percent);
std::array<double, 3> parse_tuple(std::string_view text);
/// The tuple of a row, in percent; missing values print as nan.
std::array<double, 3> percent_tuple(const CategoryMetrics& m);

}  // namespace agvas
