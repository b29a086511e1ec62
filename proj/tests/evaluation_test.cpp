#include "complaints/evaluation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <mutex>

#include "complaints/report.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace complaints {
namespace {

using testing::separable_posts;

std::vector<Domain> every_domain() { return {kAllDomains.begin(), kAllDomains.end()}; }

/// Candidate 0 always says complaint; candidate 1 returns the gold label.
/// Records the sizes it was trained with.
class OracleLearner final : public Learner {
 public:
  explicit OracleLearner(std::optional<std::size_t> fail_on_test_size = std::nullopt)
      : fail_on_(fail_on_test_size) {}

  std::string name() const override { return "oracle"; }
  std::size_t candidate_count() const override { return 2; }
  nlohmann::json describe(std::size_t c) const override { return {{"candidate", c}}; }
  bool uses_validation() const override { return true; }

  std::vector<Prediction> fit_predict(std::size_t c, const Posts& train, const Posts& val, const Posts& test,
                                      std::uint64_t) const override {
    {
      std::lock_guard lock(mutex_);
      calls.push_back({c, train.size(), val.size(), test.size()});
    }
    if (fail_on_ && test.size() == *fail_on_) throw NumericError("boom");
    std::vector<Prediction> out;
    for (const auto& p : test)
      out.push_back(c == 0 ? Prediction{1.0, Label::complaint} : Prediction{p.is_complaint() ? 0.9 : 0.1, p.label});
    return out;
  }

  struct Call {
    std::size_t candidate, train, val, test;
  };
  mutable std::vector<Call> calls;

 private:
  std::optional<std::size_t> fail_on_;
  mutable std::mutex mutex_;
};

Posts gold_shaped(std::size_t complaints, std::size_t non_complaints) {
  Posts out;
  for (std::size_t i = 0; i < complaints + non_complaints; ++i) {
    LabeledPost p;
    p.id = "g" + std::to_string(i);
    p.text = "post " + std::to_string(i);
    p.label = i < complaints ? Label::complaint : Label::non_complaint;
    p.domain = kAllDomains[i % kDomainCount];
    out.push_back(std::move(p));
  }
  return out;
}

TEST(RunJobs, RunsEveryIndexAndReportsLowestFailure) {
  std::vector<int> seen(8, 0);
  try {
    run_jobs(
        8, 3,
        [&](std::size_t i) {
          seen[i] = 1;
          if (i == 5 || i == 6) throw IoError("bad " + std::to_string(i));
        },
        [](std::size_t i) { return "job " + std::to_string(i); });
    FAIL();
  } catch (const JobError& e) {
    EXPECT_EQ(e.job(), "job 5");
    EXPECT_NE(std::string(e.what()).find("bad 5"), std::string::npos);
  }
  EXPECT_EQ(std::count(seen.begin(), seen.end(), 1), 8);
}

TEST(NestedCv, ConstantPredictorMatchesClassPrior) {
  Posts posts = gold_shaped(1232, 739);
  auto plan = make_fold_plan(posts, 1);
  auto result = run_nested_cv(posts, ConstantLearner{}, plan);
  ASSERT_EQ(result.report.per_fold.size(), 10u);
  EXPECT_NEAR(result.report.mean.accuracy, 1232.0 / 1971.0, 1e-3);
  EXPECT_NEAR(result.report.mean.accuracy, 0.624, 0.002);
}

TEST(NestedCv, SelectsBestInnerCandidateAndHoldsOutInnerFoldZero) {
  Posts posts = separable_posts(100, 0.6, 3);
  auto plan = make_fold_plan(posts, 2);
  OracleLearner learner;
  auto result = run_nested_cv(posts, learner, plan);
  for (const auto& f : result.folds) {
    EXPECT_EQ(f.candidate, 1u);
    EXPECT_EQ(f.selected, nlohmann::json({{"candidate", 1}}));
    EXPECT_DOUBLE_EQ(f.inner_scores[1], 1.0);
    EXPECT_LT(f.inner_scores[0], 1.0);
  }
  EXPECT_DOUBLE_EQ(result.report.mean.macro_f1, 1.0);
  // 2 candidates x 3 inner folds + 1 final fit per outer fold.
  ASSERT_EQ(learner.calls.size(), 70u);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto& final_call = learner.calls[k * 7 + 6];
    EXPECT_EQ(final_call.val, plan.inner[k][0].size());
    EXPECT_EQ(final_call.train, 100 - plan.outer[k].size() - plan.inner[k][0].size());
    EXPECT_EQ(final_call.test, plan.outer[k].size());
  }
}

TEST(NestedCv, EveryPostPredictedExactlyOnce) {
  Posts posts = separable_posts(120, 0.5, 4);
  auto result = run_nested_cv(posts, BowLearner{}, make_fold_plan(posts, 5));
  std::map<std::string, int> count;
  for (const auto& p : out_of_fold(result)) ++count[p.id];
  ASSERT_EQ(count.size(), posts.size());
  for (const auto& [id, n] : count) EXPECT_EQ(n, 1) << id;
}

TEST(NestedCv, AggregateMatchesBruteForce) {
  Posts posts = separable_posts(150, 0.6, 6);
  for (std::size_t i = 0; i < 20; ++i) posts[i].label = posts[i].is_complaint() ? Label::non_complaint : Label::complaint;
  auto result = run_nested_cv(posts, BowLearner{}, make_fold_plan(posts, 6));
  const auto& folds = result.report.per_fold;
  double mean = 0, var = 0;
  for (const auto& f : folds) mean += f.macro_f1;
  mean /= folds.size();
  for (const auto& f : folds) var += (f.macro_f1 - mean) * (f.macro_f1 - mean);
  EXPECT_NEAR(result.report.mean.macro_f1, mean, 1e-12);
  EXPECT_NEAR(result.report.stddev.macro_f1, std::sqrt(var / folds.size()), 1e-12);
  for (const auto& f : result.folds) {
    std::vector<int> gold, pred;
    for (std::size_t i = 0; i < f.gold.size(); ++i) {
      gold.push_back(f.gold[i] == Label::complaint);
      pred.push_back(f.predictions[i].label == Label::complaint);
    }
    EXPECT_NEAR(f.metrics.macro_f1, oracle::metrics_bruteforce(gold, pred).macro_f1, 1e-12);
  }
}

TEST(NestedCv, BowOnSeparablePostsIsNearPerfect) {
  Posts posts = separable_posts(200, 0.6, 7);
  auto result = run_nested_cv(posts, BowLearner{}, make_fold_plan(posts, 7));
  EXPECT_GE(result.report.mean.macro_f1, 0.95);
}

TEST(NestedCv, ParallelJobsGiveIdenticalResults) {
  Posts posts = separable_posts(100, 0.6, 8);
  for (std::size_t i = 0; i < 15; ++i) posts[i].label = posts[i].is_complaint() ? Label::non_complaint : Label::complaint;
  auto plan = make_fold_plan(posts, 8);
  auto a = run_nested_cv(posts, BowLearner{}, plan, {3, 1});
  auto b = run_nested_cv(posts, BowLearner{}, plan, {3, 4});
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(NestedCv, ToyTransformerIsDeterministicAcrossJobCounts) {
  Posts posts = separable_posts(60, 0.5, 9);
  auto plan = make_fold_plan(posts, 9);
  TrainConfig config;
  config.learning_rate = 1e-3;
  config.grid_search = false;
  config.max_epochs = 2;
  config.batch_size = 16;
  ToyConfig toy;
  toy.hidden = 16;
  toy.layers = 1;
  toy.intermediate = 32;
  toy.vocab_size = 256;
  TransformerLearner learner(make_toy_adapter(1, toy), config);
  auto a = run_nested_cv(posts, learner, plan, {11, 1});
  auto b = run_nested_cv(posts, learner, plan, {11, 3});
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  for (std::size_t k = 0; k < a.folds.size(); ++k) EXPECT_EQ(a.folds[k].predictions, b.folds[k].predictions);
}

TEST(NestedCv, FailuresNameTheFold) {
  Posts posts = separable_posts(100, 0.6, 10);
  auto plan = make_fold_plan(posts, 10);
  OracleLearner learner(plan.outer[3].size());
  // Inner and outer folds can share a size; any failure must carry a fold index.
  try {
    run_nested_cv(posts, learner, plan);
    FAIL();
  } catch (const JobError& e) {
    EXPECT_NE(std::string(e.what()).find("outer fold "), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST(NestedCv, RejectsPlanFromAnotherCorpus) {
  Posts posts = separable_posts(60, 0.5, 12);
  auto plan = make_fold_plan(separable_posts(60, 0.5, 13), 1);
  EXPECT_THROW(run_nested_cv(posts, ConstantLearner{}, plan), UsageError);
}

TEST(TransformerLearner, CandidatesSpanLearningRateAndFeatureSize) {
  TrainConfig config;
  auto adapter = make_toy_adapter(1);
  EXPECT_EQ(TransformerLearner(adapter, config).candidate_count(), 4u);
  config.fusion = FusionMode::emotion;
  EmotionLexicon lex;
  FeatureExtractor features(FeatureMode::emotion, &lex, nullptr);
  TransformerLearner fused(adapter, config, &features);
  EXPECT_EQ(fused.candidate_count(), 12u);
  EXPECT_EQ(fused.describe(fused.default_candidate()),
            nlohmann::json({{"learning_rate", 1e-5}, {"feature_size", 200}}));
  EXPECT_EQ(fused.name(), "toy+emotion");
  EXPECT_THROW(TransformerLearner(adapter, config), UsageError);
}

TEST(TransformerLearner, DistantStageTrainsOncePerCandidate) {
  TrainConfig config;
  config.grid_search = false;
  config.learning_rate = 1e-3;
  config.max_epochs = 1;
  config.distant_stage = true;
  Posts distant = separable_posts(40, 0.5, 14);
  for (auto& p : distant) p.provenance = Provenance::distant;
  ToyConfig toy;
  toy.hidden = 16;
  toy.layers = 1;
  TransformerLearner learner(make_toy_adapter(1, toy), config, nullptr, distant);
  EXPECT_EQ(learner.name(), "toy+distant");
  const Checkpoint* first = &learner.distant_stage(0);
  EXPECT_EQ(first, &learner.distant_stage(0));
  EXPECT_EQ(first->stages.at(0).name, "distant");
}

TEST(CrossDomain, ShapeIs72PlusNine) {
  Posts posts = separable_posts(270, 0.6, 15, every_domain());
  auto m = run_cross_domain(posts, BowLearner{});
  EXPECT_EQ(m.cells.size(), 72u);
  EXPECT_EQ(m.all.size(), 9u);
  EXPECT_TRUE(m.absent.empty());
  for (Domain d : kAllDomains) EXPECT_FALSE(m.cell(d, d));
  for (const auto& [key, f1] : m.cells) {
    EXPECT_GE(f1, 0.0);
    EXPECT_LE(f1, 1.0);
  }
}

TEST(CrossDomain, EmptyDomainCellsAreAbsent) {
  std::vector<Domain> domains = every_domain();
  domains.erase(std::find(domains.begin(), domains.end(), Domain::Cars));
  Posts posts = separable_posts(240, 0.6, 16, domains);
  auto m = run_cross_domain(posts, BowLearner{});
  EXPECT_EQ(m.cells.size(), 56u);
  EXPECT_EQ(m.all.size(), 8u);
  EXPECT_FALSE(m.all_row(Domain::Cars));
  EXPECT_FALSE(m.cell(Domain::Cars, Domain::Food));
  EXPECT_FALSE(m.cell(Domain::Food, Domain::Cars));
  EXPECT_FALSE(m.absent.empty());
}

TEST(CrossDomain, SymmetricDomainsScoreAlike) {
  Posts posts = separable_posts(160, 0.5, 17, {Domain::Food, Domain::Apparel});
  TrainConfig config;
  config.learning_rate = 1e-3;
  config.grid_search = false;
  config.max_epochs = 20;
  config.patience = 5;
  config.batch_size = 8;
  ToyConfig toy;
  toy.hidden = 16;
  toy.layers = 1;
  toy.intermediate = 32;
  toy.vocab_size = 256;
  TransformerLearner learner(make_toy_adapter(2, toy), config);
  auto m = run_cross_domain(posts, learner, {5, 2});
  ASSERT_TRUE(m.cell(Domain::Food, Domain::Apparel));
  ASSERT_TRUE(m.cell(Domain::Apparel, Domain::Food));
  EXPECT_NEAR(*m.cell(Domain::Food, Domain::Apparel), *m.cell(Domain::Apparel, Domain::Food), 0.1);
  EXPECT_EQ(m.cells.size(), 2u);
}

TEST(ExportErrors, PerfectPredictionsExportNothing) {
  Posts posts = separable_posts(20, 0.5, 18);
  std::vector<OutOfFoldPrediction> preds;
  for (const auto& p : posts) preds.push_back({p.id, 0, {p.is_complaint() ? 0.9 : 0.1, p.label}});
  auto ex = export_errors(posts, preds);
  EXPECT_TRUE(ex.records.empty());
  EXPECT_EQ(ex.summary.missed_complaint_rate(), 0.0);
  EXPECT_EQ(ex.summary.flagged_non_complaint_rate(), 0.0);
}

TEST(ExportErrors, TenPostsTwoErrors) {
  Posts posts = gold_shaped(6, 4);
  std::vector<OutOfFoldPrediction> preds;
  for (const auto& p : posts) preds.push_back({p.id, 2, {p.is_complaint() ? 0.8 : 0.2, p.label}});
  preds[1].prediction = {0.3, Label::non_complaint};  // complaint missed
  preds[8].prediction = {0.7, Label::complaint};      // non-complaint flagged
  auto ex = export_errors(posts, preds);
  ASSERT_EQ(ex.records.size(), 2u);
  EXPECT_EQ(ex.records[0].id, "g1");
  EXPECT_EQ(ex.records[0].gold, Label::complaint);
  EXPECT_EQ(ex.records[0].predicted, Label::non_complaint);
  EXPECT_EQ(ex.records[0].fold, 2u);
  EXPECT_EQ(ex.records[0].category, "");
  EXPECT_DOUBLE_EQ(ex.summary.missed_complaint_rate(), 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(ex.summary.flagged_non_complaint_rate(), 1.0 / 4.0);
  for (const auto& r : ex.records) EXPECT_NE(r.gold, r.predicted);
}

TEST(ExportErrors, RecordCountMatchesAccuracy) {
  Posts posts = separable_posts(150, 0.6, 19);
  for (std::size_t i = 0; i < 25; ++i) posts[i].label = posts[i].is_complaint() ? Label::non_complaint : Label::complaint;
  auto result = run_nested_cv(posts, BowLearner{}, make_fold_plan(posts, 19));
  auto oof = out_of_fold(result);
  auto ex = export_errors(posts, oof);
  std::size_t correct = 0;
  std::map<std::string, Label> gold;
  for (const auto& p : posts) gold[p.id] = p.label;
  for (const auto& p : oof) correct += p.prediction.label == gold[p.id];
  EXPECT_EQ(ex.records.size(), posts.size() - correct);
  EXPECT_GT(ex.records.size(), 0u);
}

TEST(ExportErrors, MissingPredictionIsError) {
  Posts posts = separable_posts(4, 0.5, 20);
  std::vector<OutOfFoldPrediction> preds = {{posts[0].id, 0, {}}};
  EXPECT_THROW(export_errors(posts, preds), UsageError);
}

TEST(SampleErrors, AtMostKPerDirectionAndSeeded) {
  std::vector<ErrorRecord> records;
  for (int i = 0; i < 80; ++i)
    records.push_back({"e" + std::to_string(i), "", i % 2 ? Label::complaint : Label::non_complaint,
                       i % 2 ? Label::non_complaint : Label::complaint, 0.5, 0, ""});
  auto a = sample_errors(records, 10, 3);
  auto b = sample_errors(records, 10, 3);
  auto c = sample_errors(records, 10, 4);
  ASSERT_EQ(a.size(), 20u);
  EXPECT_EQ(std::count_if(a.begin(), a.end(), [](const auto& r) { return r.gold == Label::complaint; }), 10);
  std::vector<std::string> ia, ib, ic;
  for (const auto& r : a) ia.push_back(r.id);
  for (const auto& r : b) ib.push_back(r.id);
  for (const auto& r : c) ic.push_back(r.id);
  EXPECT_EQ(ia, ib);
  EXPECT_NE(ia, ic);
  EXPECT_EQ(sample_errors(records, 50, 3).size(), 80u);
}

TEST(Report, ReferenceLookup) {
  EXPECT_DOUBLE_EQ(reference_for("bert_base_uncased")->macro_f1, 87.0);
  EXPECT_DOUBLE_EQ(reference_for("roberta_base")->macro_f1, 86.6);
  EXPECT_DOUBLE_EQ(reference_for("bert_base_uncased+emotion_topics+distant")->macro_f1, 86.9);
  EXPECT_DOUBLE_EQ(reference_for("lr_bow+distant")->macro_f1, 79.0);
  EXPECT_FALSE(reference_for("toy"));
  EXPECT_FALSE(reference_for("albert_base+topics"));
}

TEST(Report, TablesRender) {
  Posts posts = separable_posts(270, 0.6, 21, every_domain());
  auto m = run_cross_domain(posts, BowLearner{});
  const auto table = format_cross_domain_table(m);
  EXPECT_NE(table.find("Electronics"), std::string::npos);
  EXPECT_NE(table.find("\nAll "), std::string::npos);
  auto json = to_json(m, "lr_bow");
  EXPECT_EQ(json["cells"]["Food"].size(), 8u);
  EXPECT_FALSE(json["cells"]["Food"].contains("Food"));

  auto result = run_nested_cv(posts, BowLearner{}, make_fold_plan(posts, 1));
  const auto text = format_metrics_table(result);
  EXPECT_NE(text.find("published: LR-BOW + Dist. Supervision"), std::string::npos);
  EXPECT_EQ(to_json(result)["folds"].size(), 10u);
}

}  // namespace
}  // namespace complaints
