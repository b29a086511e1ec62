#include "complaints/bow.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"

namespace complaints {
namespace {

using testing::separable_posts;

LabeledPost post(std::string id, std::string text, Label label) {
  LabeledPost p;
  p.id = std::move(id);
  p.text = std::move(text);
  p.label = label;
  return p;
}

TEST(Bow, TwoDisjointTokensSeparate) {
  Posts train = {post("a", "refund", Label::complaint), post("b", "lovely", Label::non_complaint)};
  for (Real c : {0.01, 1.0, 10.0}) {
    auto m = fit_bow_fixed(train, c);
    auto preds = predict(m, train);
    EXPECT_EQ(preds[0].label, Label::complaint) << c;
    EXPECT_EQ(preds[1].label, Label::non_complaint) << c;
  }
}

TEST(Bow, VocabularyExcludesValidationOnlyTokens) {
  Posts train = separable_posts(40, 0.5, 1);
  Posts val = {post("v1", "zzzonlyinval refund", Label::complaint), post("v2", "qqqalsoval", Label::non_complaint)};
  auto m = fit_bow(train, val);
  for (const auto& [tok, col] : m.vocabulary) {
    bool in_train = false;
    for (const auto& p : train)
      for (const auto& t : basic_tokenize(p.text)) in_train |= t == tok;
    EXPECT_TRUE(in_train) << tok;
  }
  EXPECT_FALSE(m.vocabulary.count("zzzonlyinval"));
  EXPECT_FALSE(m.vocabulary.count("qqqalsoval"));
}

TEST(Bow, EmptyVocabularyIsError) {
  Posts train = {post("a", "   ", Label::complaint), post("b", "", Label::non_complaint)};
  EXPECT_THROW(fit_bow_fixed(train, 1.0), UsageError);
  EXPECT_THROW(fit_bow_fixed({}, 1.0), UsageError);
}

TEST(Bow, DecisionFunctionMatchesScalarOracle) {
  Posts posts = separable_posts(100, 0.6, 7);
  auto m = fit_bow_fixed(posts, 1.0);
  std::vector<std::pair<std::string, double>> weights;
  for (const auto& [tok, col] : m.vocabulary) weights.emplace_back(tok, m.weights[static_cast<Eigen::Index>(col)]);
  for (const auto& p : posts)
    EXPECT_NEAR(m.decision_function(p.text), oracle::bow_decision(basic_tokenize(p.text), weights, m.bias), 1e-8);
}

TEST(Bow, SolutionIsStationary) {
  Posts posts = separable_posts(60, 0.5, 9);
  // Flip a few labels so the problem is not separable.
  for (std::size_t i = 0; i < 6; ++i)
    posts[i].label = posts[i].is_complaint() ? Label::non_complaint : Label::complaint;
  for (Real c : {0.1, 1.0}) {
    auto m = fit_bow_fixed(posts, c);
    oracle::Mat x;
    oracle::Vec y, w(m.weights.data(), m.weights.data() + m.weights.size());
    for (const auto& p : posts) {
      oracle::Vec row(w.size(), 0.0);
      for (const auto& t : basic_tokenize(p.text)) row[m.vocabulary.at(t)] += 1;
      x.push_back(row);
      y.push_back(p.is_complaint() ? 1.0 : 0.0);
    }
    for (double g : oracle::logistic_gradient(x, y, w, m.bias, c)) EXPECT_NEAR(g, 0.0, 1e-5) << c;
  }
}

TEST(Bow, StrongerRegularizationShrinksWeights) {
  Posts posts = separable_posts(60, 0.5, 11);
  EXPECT_LT(fit_bow_fixed(posts, 0.01).weights.norm(), fit_bow_fixed(posts, 10.0).weights.norm());
}

TEST(Bow, GridSelectsByValidationMacroF1) {
  Posts train = separable_posts(80, 0.5, 13);
  Posts val = separable_posts(20, 0.5, 14);
  for (auto& p : val) p.id = "v" + p.id;
  auto m = fit_bow(train, val);
  std::vector<Label> gold, got;
  for (const auto& p : val) gold.push_back(p.label);
  for (const auto& pr : predict(m, val)) got.push_back(pr.label);
  EXPECT_DOUBLE_EQ(compute_metrics(gold, got).macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(m.c, 0.01);
}

TEST(BowConfig, RejectsUnknownKey) {
  BowConfig c;
  EXPECT_THROW(merge_json(c, nlohmann::json{{"penalty", "l1"}}), ConfigError);
  EXPECT_THROW(merge_json(c, nlohmann::json{{"c_grid", {-1.0}}}); c.validate(), ConfigError);
}

}  // namespace
}  // namespace complaints
