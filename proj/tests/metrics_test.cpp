#include "complaints/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "test_support.hpp"

namespace complaints {
namespace {

std::vector<Label> labels(const std::vector<int>& bits) {
  std::vector<Label> out;
  for (int b : bits) out.push_back(b ? Label::complaint : Label::non_complaint);
  return out;
}

TEST(ComputeMetrics, PerfectPredictions) {
  auto gold = labels({1, 0, 1, 1, 0});
  auto m = compute_metrics(gold, gold);
  EXPECT_EQ(m, (Metrics{1.0, 1.0, 1.0, 1.0}));
}

TEST(ComputeMetrics, HandComputedConfusionTable) {
  // TP=3, FP=1, FN=2, TN=4
  auto gold = labels({1, 1, 1, 0, 1, 1, 0, 0, 0, 0});
  auto pred = labels({1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  auto c = confusion(gold, pred);
  ASSERT_EQ(c.true_positive, 3u);
  ASSERT_EQ(c.false_positive, 1u);
  ASSERT_EQ(c.false_negative, 2u);
  ASSERT_EQ(c.true_negative, 4u);
  auto m = compute_metrics(gold, pred);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(m.precision, 17.0 / 24.0);  // (3/4 + 4/6) / 2
  EXPECT_DOUBLE_EQ(m.recall, 0.7);             // (3/5 + 4/5) / 2
  EXPECT_DOUBLE_EQ(m.macro_f1, 23.0 / 33.0);   // (2/3 + 8/11) / 2
}

TEST(ComputeMetrics, MatchesIndependentConfusionImplementation) {
  std::mt19937 rng(1000);
  std::uniform_int_distribution<int> bit(0, 1);
  std::uniform_int_distribution<int> len(1, 60);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> g(static_cast<std::size_t>(len(rng))), p(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = bit(rng);
      p[i] = bit(rng);
    }
    auto expected = oracle::metrics_bruteforce(g, p);
    auto got = compute_metrics(labels(g), labels(p));
    EXPECT_NEAR(got.accuracy, expected.accuracy, 1e-12);
    EXPECT_NEAR(got.precision, expected.precision, 1e-12);
    EXPECT_NEAR(got.recall, expected.recall, 1e-12);
    EXPECT_NEAR(got.macro_f1, expected.macro_f1, 1e-12);
  }
}

TEST(ComputeMetrics, PermutationInvariant) {
  std::mt19937 rng(7);
  std::vector<int> g(50), p(50);
  for (std::size_t i = 0; i < 50; ++i) {
    g[i] = static_cast<int>(rng() % 2);
    p[i] = static_cast<int>(rng() % 2);
  }
  auto base = compute_metrics(labels(g), labels(p));
  std::vector<std::size_t> order(50);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> g2, p2;
  for (auto i : order) {
    g2.push_back(g[i]);
    p2.push_back(p[i]);
  }
  EXPECT_EQ(compute_metrics(labels(g2), labels(p2)), base);
}

TEST(ComputeMetrics, AbsentClassScoresZeroWithWarning) {
  testing::WarningCapture warnings;
  auto all = labels({1, 1, 1});
  auto m = compute_metrics(all, all);
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(m.macro_f1, 0.5);
  EXPECT_TRUE(warnings.contains("non_complaint"));
}

TEST(ComputeMetrics, LengthMismatchAndEmptyInput) {
  EXPECT_THROW(compute_metrics(labels({1, 0}), labels({1})), ShapeError);
  EXPECT_THROW(compute_metrics(labels({}), labels({})), UsageError);
}

TEST(Aggregate, MeanAndPopulationStdMatchRecomputation) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Metrics> folds;
  for (int i = 0; i < 10; ++i) folds.push_back({u(rng), u(rng), u(rng), u(rng)});
  auto report = aggregate(folds);
  ASSERT_EQ(report.per_fold.size(), 10u);
  double sum = 0;
  for (const auto& f : folds) sum += f.macro_f1;
  const double mean = sum / 10;
  double ss = 0;
  for (const auto& f : folds) ss += (f.macro_f1 - mean) * (f.macro_f1 - mean);
  EXPECT_NEAR(report.mean.macro_f1, mean, 1e-12);
  EXPECT_NEAR(report.stddev.macro_f1, std::sqrt(ss / 10), 1e-12);
}

}  // namespace
}  // namespace complaints
