#include "agvas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace agvas {

namespace {

void check_lengths(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("metrics: score and label counts differ");
}

/// Indices sorted by descending score; ties keep input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::size_t count_positive(std::span<const std::uint8_t> labels) {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](std::uint8_t l) { return l != 0; }));
}

}  // namespace

std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores, labels);
  const std::size_t positives = count_positive(labels);
  if (positives == 0) return std::nullopt;
  const auto order = descending_order(scores);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      tp += labels[order[i]] != 0;
      ++seen;
      ++i;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

std::optional<double> f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels,
                             std::size_t max_candidates) {
  check_lengths(scores, labels);
  const std::size_t positives = count_positive(labels);
  if (positives == 0) return std::nullopt;
  const auto order = descending_order(scores);
  const std::size_t n = order.size();
  // cum_tp[k] = positives among the k highest scores.
  std::vector<std::size_t> cum_tp(n + 1, 0);
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    cum_tp[i + 1] = cum_tp[i] + (labels[order[i]] != 0);
    sorted[i] = scores[order[i]];
  }
  std::vector<double> unique = sorted;
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  std::vector<double> candidates;
  if (unique.size() <= max_candidates || max_candidates < 2) {
    candidates = std::move(unique);
  } else {
    // Quantiles of the score distribution (ascending positions in the descending list).
    for (std::size_t q = 0; q < max_candidates; ++q) {
      const std::size_t pos = static_cast<std::size_t>(
          std::floor(static_cast<double>(q) * static_cast<double>(n - 1) / static_cast<double>(max_candidates - 1)));
      candidates.push_back(sorted[n - 1 - pos]);
    }
  }
  double best = 0.0;
  for (double t : candidates) {
    // Number of scores >= t in the descending list.
    const auto it = std::partition_point(sorted.begin(), sorted.end(), [t](double s) { return s >= t; });
    const std::size_t k = static_cast<std::size_t>(it - sorted.begin());
    const double tp = static_cast<double>(cum_tp[k]);
    best = std::max(best, 2.0 * tp / (static_cast<double>(k) + static_cast<double>(positives)));
  }
  return best;
}

IouSummary iou_ano(std::span<const EvalRecord> records) {
  IouSummary out;
  double total = 0.0;
  for (const auto& r : records) {
    if (!r.is_anomalous) continue;
    if (r.pred.rows() != r.gt.rows() || r.pred.cols() != r.gt.cols()) {
      throw std::invalid_argument("iou_ano: prediction and ground truth sizes differ for " + r.id);
    }
    std::size_t inter = 0, uni = 0;
    for (Index i = 0; i < r.pred.size(); ++i) {
      const bool m = r.pred.data()[i] != 0;
      const bool g = r.gt.data()[i] != 0;
      inter += m && g;
      uni += m || g;
    }
    if (uni == 0) {
      total += 1.0;
      ++out.empty_union;
    } else {
      total += static_cast<double>(inter) / static_cast<double>(uni);
    }
    ++out.count;
  }
  if (out.count == 0) throw std::invalid_argument("iou_ano: no anomalous records");
  out.value = total / static_cast<double>(out.count);
  return out;
}

IouSummary iou_nor(std::span<const EvalRecord> records) {
  IouSummary out;
  std::size_t empty = 0;
  for (const auto& r : records) {
    if (r.is_anomalous) continue;
    ++out.count;
    empty += (r.pred.array() == 0).all();
  }
  if (out.count == 0) throw std::invalid_argument("iou_nor: no normal records");
  out.value = static_cast<double>(empty) / static_cast<double>(out.count);
  return out;
}

MetricsReport evaluate_dataset(std::span<const EvalRecord> records) {
  std::map<std::string, std::vector<const EvalRecord*>> by_category;
  Index rows = -1, cols = -1;
  for (const auto& r : records) {
    if (rows < 0) {
      rows = r.score.rows();
      cols = r.score.cols();
    }
    for (auto [rr, cc] : {std::pair{r.score.rows(), r.score.cols()}, std::pair{r.pred.rows(), r.pred.cols()},
                          std::pair{r.gt.rows(), r.gt.cols()}}) {
      if (rr != rows || cc != cols) throw std::invalid_argument("evaluate_dataset: mixed resolutions at " + r.id);
    }
    by_category[r.category].push_back(&r);
  }
  MetricsReport report;
  for (const auto& [name, recs] : by_category) {
    CategoryMetrics m;
    m.category = name;
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const EvalRecord* r : recs) {
      scores.insert(scores.end(), r->score.data(), r->score.data() + r->score.size());
      for (Index i = 0; i < r->gt.size(); ++i) labels.push_back(r->gt.data()[i] != 0);
      (r->is_anomalous ? m.n_ano : m.n_nor)++;
    }
    m.ap = average_precision(scores, labels);
    m.f1_max = f1_max(scores, labels);
    std::vector<EvalRecord> subset;
    subset.reserve(recs.size());
    for (const EvalRecord* r : recs) subset.push_back(*r);
    if (m.n_ano > 0) {
      const auto s = iou_ano(subset);
      m.iou_ano = s.value;
      m.empty_union = s.empty_union;
    }
    if (m.n_nor > 0) m.iou_nor = iou_nor(subset).value;
    report.categories.push_back(std::move(m));
  }
  auto mean_of = [&](auto field) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : report.categories) {
      if (const auto& v = c.*field) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  report.mean.category = "mean";
  report.mean.ap = mean_of(&CategoryMetrics::ap);
  report.mean.f1_max = mean_of(&CategoryMetrics::f1_max);
  report.mean.iou_ano = mean_of(&CategoryMetrics::iou_ano);
  report.mean.iou_nor = mean_of(&CategoryMetrics::iou_nor);
  for (const auto& c : report.categories) {
    report.mean.n_ano += c.n_ano;
    report.mean.n_nor += c.n_nor;
    report.mean.empty_union += c.empty_union;
  }
  return report;
}

namespace {

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
  return buf;
}

std::string exact(const std::optional<double>& v) {
  if (!v) return "missing";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10f", *v);
  return buf;
}

}  // namespace

std::string format_table(const MetricsReport& report) {
  std::vector<const CategoryMetrics*> rows;
  for (const auto& c : report.categories) rows.push_back(&c);
  rows.push_back(&report.mean);
  std::size_t width = 8;
  for (const auto* r : rows) width = std::max(width, r->category.size());
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %7s %7s %8s %8s %6s %6s\n", static_cast<int>(width), "category", "AP",
                "F1-Max", "IoU_ano", "IoU_nor", "N_ano", "N_nor");
  os << line;
  for (const auto* r : rows) {
    std::snprintf(line, sizeof line, "%-*s %7s %7s %8s %8s %6zu %6zu\n", static_cast<int>(width), r->category.c_str(),
                  pct(r->ap).c_str(), pct(r->f1_max).c_str(), pct(r->iou_ano).c_str(), pct(r->iou_nor).c_str(),
                  r->n_ano, r->n_nor);
    os << line;
  }
  return os.str();
}

std::string format_key_values(const MetricsReport& report) {
  std::ostringstream os;
  auto emit = [&](const CategoryMetrics& m) {
    const std::string p = m.category + ".";
    os << p << "ap = " << exact(m.ap) << "\n";
    os << p << "f1_max = " << exact(m.f1_max) << "\n";
    os << p << "iou_ano = " << exact(m.iou_ano) << "\n";
    os << p << "iou_nor = " << exact(m.iou_nor) << "\n";
    os << p << "n_ano = " << m.n_ano << "\n";
    os << p << "n_nor = " << m.n_nor << "\n";
    os << p << "empty_union = " << m.empty_union << "\n";
  };
  for (const auto& c : report.categories) emit(c);
  emit(report.mean);
  return os.str();
}

std::string format_tuple(const std::array<double, 3>& percent) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "(%.1f, %.1f, %.1f)", percent[0], percent[1], percent[2]);
  return buf;
}

std::array<double, 3> parse_tuple(std::string_view text) {
  std::array<double, 3> out{};
  const std::string s(text);
  char tail = 0;
  if (std::sscanf(s.c_str(), " (%lf , %lf , %lf %c", &out[0], &out[1], &out[2], &tail) != 4 || tail != ')') {
    throw std::invalid_argument("parse_tuple: expected \"(a, b, c)\", got \"" + s + "\"");
  }
  return out;
}

std::array<double, 3> percent_tuple(const CategoryMetrics& m) {
  auto p = [](const std::optional<double>& v) { return v ? 100.0 * *v : std::numeric_limits<double>::quiet_NaN(); };
  return {p(m.ap), p(m.f1_max), p(m.iou_ano)};
}

}  // namespace agvas
