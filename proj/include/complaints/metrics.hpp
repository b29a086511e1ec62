#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "complaints/corpus.hpp"
#include "complaints/error.hpp"
#include "complaints/log.hpp"

namespace complaints {

/// Accuracy plus macro-averaged (unweighted over the two classes)
/// precision, recall and F1.
struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double macro_f1 = 0.0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct ConfusionCounts {
  std::size_t true_positive = 0;   // complaint predicted complaint
  std::size_t false_positive = 0;  // non-complaint predicted complaint
  std::size_t false_negative = 0;  // complaint predicted non-complaint
  std::size_t true_negative = 0;

  std::size_t total() const {
    return true_positive + false_positive + false_negative + true_negative;
  }
};

inline ConfusionCounts confusion(std::span<const Label> gold, std::span<const Label> predicted) {
  if (gold.size() != predicted.size())
    throw ShapeError("compute_metrics: " + std::to_string(gold.size()) + " gold labels but " +
                     std::to_string(predicted.size()) + " predictions");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] == Label::complaint;
    const bool p = predicted[i] == Label::complaint;
    if (g && p) ++c.true_positive;
    else if (!g && p) ++c.false_positive;
    else if (g && !p) ++c.false_negative;
    else ++c.true_negative;
  }
  return c;
}

namespace detail {

struct ClassScores {
  double precision, recall, f1;
};

// Undefined ratios (empty denominators) score 0.
inline ClassScores class_scores(std::size_t tp, std::size_t fp, std::size_t fn) {
  auto ratio = [](double num, double den) { return den > 0 ? num / den : 0.0; };
  const double p = ratio(tp, tp + fp);
  const double r = ratio(tp, tp + fn);
  return {p, r, ratio(2 * p * r, p + r)};
}

}  // namespace detail

inline Metrics metrics_from_confusion(const ConfusionCounts& c) {
  if (c.total() == 0) throw UsageError("compute_metrics: empty label sequences");
  const auto pos = detail::class_scores(c.true_positive, c.false_positive, c.false_negative);
  const auto neg = detail::class_scores(c.true_negative, c.false_negative, c.false_positive);
  if (c.true_positive + c.false_positive + c.false_negative == 0)
    log::warn("compute_metrics: class 'complaint' absent from gold and predictions; its F1 counts as 0");
  if (c.true_negative + c.false_negative + c.false_positive == 0)
    log::warn("compute_metrics: class 'non_complaint' absent from gold and predictions; its F1 counts as 0");
  Metrics m;
  m.accuracy = static_cast<double>(c.true_positive + c.true_negative) / static_cast<double>(c.total());
  m.precision = (pos.precision + neg.precision) / 2;
  m.recall = (pos.recall + neg.recall) / 2;
  m.macro_f1 = (pos.f1 + neg.f1) / 2;
  return m;
}

inline Metrics compute_metrics(std::span<const Label> gold, std::span<const Label> predicted) {
  return metrics_from_confusion(confusion(gold, predicted));
}

/// Per-fold metrics with their mean and population standard deviation.
struct MetricsReport {
  std::vector<Metrics> per_fold;
  Metrics mean;
  Metrics stddev;
};

inline MetricsReport aggregate(std::vector<Metrics> per_fold) {
  MetricsReport report;
  report.per_fold = std::move(per_fold);
  const auto n = static_cast<double>(report.per_fold.size());
  if (report.per_fold.empty()) return report;
  auto fields = [](Metrics& m) {
    return std::array<double*, 4>{&m.accuracy, &m.precision, &m.recall, &m.macro_f1};
  };
  auto mean = fields(report.mean);
  auto sd = fields(report.stddev);
  for (auto& fold : report.per_fold) {
    auto f = fields(fold);
    for (std::size_t k = 0; k < 4; ++k) *mean[k] += *f[k];
  }
  for (std::size_t k = 0; k < 4; ++k) *mean[k] /= n;
  for (auto& fold : report.per_fold) {
    auto f = fields(fold);
    for (std::size_t k = 0; k < 4; ++k) *sd[k] += (*f[k] - *mean[k]) * (*f[k] - *mean[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) *sd[k] = std::sqrt(*sd[k] / n);
  return report;
}

}  // namespace complaints
