#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "complaints/bow.hpp"
#include "complaints/corpus.hpp"
#include "complaints/error.hpp"
#include "complaints/folds.hpp"
#include "complaints/log.hpp"
#include "complaints/metrics.hpp"
#include "complaints/model.hpp"
#include "complaints/seeding.hpp"

namespace complaints {

/// A training failure inside one fold or cross-domain cell.
class JobError : public Error {
 public:
  JobError(std::string job, const std::string& what)
      : Error(job + ": " + what), job_(std::move(job)) {}
  const std::string& job() const { return job_; }

 private:
  std::string job_;
};

/// Runs fn(0..n-1) on up to `jobs` threads. Every index runs even when
/// another fails; the lowest failing index is rethrown as a JobError.
template <typename Fn>
void run_jobs(std::size_t n, std::size_t jobs, Fn&& fn, const std::function<std::string(std::size_t)>& job_name) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const JobError&) {
      throw;
    } catch (const std::exception& e) {
      throw JobError(job_name(i), e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Learners

/// A model family plus its hyper-parameter grid. Implementations must be
/// safe to call concurrently.
class Learner {
 public:
  virtual ~Learner() = default;

  virtual std::string name() const = 0;
  virtual std::size_t candidate_count() const = 0;
  virtual nlohmann::json describe(std::size_t candidate) const = 0;
  /// Candidate used when no selection loop runs (cross-domain cells).
  virtual std::size_t default_candidate() const { return 0; }
  /// Whether fitting consumes a validation set (for early stopping).
  virtual bool uses_validation() const = 0;

  /// Trains on `train` (validating on `val`) and predicts `test`.
  virtual std::vector<Prediction> fit_predict(std::size_t candidate, const Posts& train, const Posts& val,
                                              const Posts& test, std::uint64_t seed) const = 0;
};

/// Fine-tuned encoder, optionally with fusion and the distant stage.
/// Distant-stage checkpoints depend only on the candidate and are shared
/// across folds.
class TransformerLearner final : public Learner {
 public:
  TransformerLearner(EncoderAdapter adapter, TrainConfig config, const FeatureExtractor* features = nullptr,
                     Posts distant = {})
      : adapter_(std::move(adapter)), config_(std::move(config)), features_(features), distant_(std::move(distant)) {
    config_.validate();
    if (config_.fusion != FusionMode::none && !features_)
      throw UsageError("fusion mode '" + std::string(to_string(config_.fusion)) + "' needs a feature extractor");
    if (config_.distant_stage && distant_.empty()) log::warn("distant stage requested but the distant corpus is empty");
    const std::vector<Real> lrs = config_.grid_search ? config_.learning_rate_grid : std::vector<Real>{config_.learning_rate};
    const std::vector<std::size_t> hs = config_.grid_search && config_.fusion != FusionMode::none
                                            ? config_.feature_size_grid
                                            : std::vector<std::size_t>{config_.feature_size};
    for (Real lr : lrs)
      for (std::size_t h : hs) candidates_.push_back({lr, h});
  }

  std::string name() const override {
    std::string n(adapter_name(adapter_.name));
    if (config_.fusion != FusionMode::none) n += "+" + std::string(to_string(config_.fusion));
    if (config_.distant_stage) n += "+distant";
    return n;
  }

  std::size_t candidate_count() const override { return candidates_.size(); }

  nlohmann::json describe(std::size_t c) const override {
    nlohmann::json j = {{"learning_rate", candidates_.at(c).first}};
    if (config_.fusion != FusionMode::none) j["feature_size"] = candidates_.at(c).second;
    return j;
  }

  std::size_t default_candidate() const override {
    for (std::size_t c = 0; c < candidates_.size(); ++c)
      if (candidates_[c].first == config_.learning_rate && candidates_[c].second == config_.feature_size) return c;
    return 0;
  }

  bool uses_validation() const override { return true; }

  TrainConfig config_for(std::size_t c, std::uint64_t seed) const {
    TrainConfig config = config_;
    config.learning_rate = candidates_.at(c).first;
    config.feature_size = candidates_.at(c).second;
    config.seed = seed;
    return config;
  }

  std::vector<Prediction> fit_predict(std::size_t c, const Posts& train, const Posts& val, const Posts& test,
                                      std::uint64_t seed) const override {
    const TrainConfig config = config_for(c, seed);
    Checkpoint ckpt = config_.distant_stage && !distant_.empty()
                          ? fit_gold_stage(distant_stage(c), train, val, config, features_)
                          : fit(train, val, config, adapter_, features_);
    return predict(ckpt, test, features_);
  }

  /// Stage-1 checkpoint for candidate `c`, trained once.
  const Checkpoint& distant_stage(std::size_t c) const {
    std::shared_future<Checkpoint> pending;
    bool owner = false;
    std::promise<Checkpoint> promise;
    {
      std::lock_guard lock(mutex_);
      auto it = stage1_.find(c);
      if (it == stage1_.end()) {
        pending = promise.get_future().share();
        stage1_.emplace(c, pending);
        owner = true;
      } else {
        pending = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(
            fit_distant_stage(distant_, config_for(c, derive_seed(config_.seed, "distant-stage")), adapter_, features_));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return pending.get();
  }

 private:
  EncoderAdapter adapter_;
  TrainConfig config_;
  const FeatureExtractor* features_;
  Posts distant_;
  std::vector<std::pair<Real, std::size_t>> candidates_;
  mutable std::mutex mutex_;
  mutable std::map<std::size_t, std::shared_future<Checkpoint>> stage1_;
};

/// Logistic regression over token counts; candidates are the C grid. With
/// the distant flag the distant corpus is pooled into every training set.
class BowLearner final : public Learner {
 public:
  explicit BowLearner(BowConfig config = {}, Posts distant = {})
      : config_(std::move(config)), distant_(std::move(distant)) {
    config_.validate();
  }

  std::string name() const override { return distant_.empty() ? "lr_bow" : "lr_bow+distant"; }
  std::size_t candidate_count() const override { return config_.c_grid.size(); }
  nlohmann::json describe(std::size_t c) const override { return {{"C", config_.c_grid.at(c)}}; }

  std::size_t default_candidate() const override {
    for (std::size_t c = 0; c < config_.c_grid.size(); ++c)
      if (config_.c_grid[c] == 1.0) return c;
    return 0;
  }

  bool uses_validation() const override { return false; }

  std::vector<Prediction> fit_predict(std::size_t c, const Posts& train, const Posts&, const Posts& test,
                                      std::uint64_t) const override {
    Posts pooled = train;
    pooled.insert(pooled.end(), distant_.begin(), distant_.end());
    return predict(fit_bow_fixed(pooled, config_.c_grid.at(c), config_), test);
  }

 private:
  BowConfig config_;
  Posts distant_;
};

/// Predicts complaint for everything; a reference point for the class prior.
class ConstantLearner final : public Learner {
 public:
  std::string name() const override { return "constant_complaint"; }
  std::size_t candidate_count() const override { return 1; }
  nlohmann::json describe(std::size_t) const override { return nlohmann::json::object(); }
  bool uses_validation() const override { return false; }
  std::vector<Prediction> fit_predict(std::size_t, const Posts&, const Posts&, const Posts& test,
                                      std::uint64_t) const override {
    return std::vector<Prediction>(test.size(), Prediction{1.0, Label::complaint});
  }
};

// ---------------------------------------------------------------------------
// Nested cross-validation

struct RunOptions {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct FoldOutcome {
  std::size_t fold = 0;
  std::size_t candidate = 0;
  nlohmann::json selected;
  std::vector<double> inner_scores;  // mean inner macro F1 per candidate
  std::vector<std::string> ids;
  std::vector<Prediction> predictions;
  std::vector<Label> gold;
  Metrics metrics;
};

struct NestedCvResult {
  std::string learner;
  MetricsReport report;
  std::vector<FoldOutcome> folds;
};

namespace detail {

inline std::vector<Label> labels_of(const Posts& posts) {
  std::vector<Label> out;
  for (const auto& p : posts) out.push_back(p.label);
  return out;
}

inline std::vector<Label> labels_of(const std::vector<Prediction>& preds) {
  std::vector<Label> out;
  for (const auto& p : preds) out.push_back(p.label);
  return out;
}

inline Posts without(const Posts& posts, const IdSet& ids) {
  std::set<std::string_view> drop(ids.begin(), ids.end());
  Posts out;
  for (const auto& p : posts)
    if (!drop.count(p.id)) out.push_back(p);
  return out;
}

inline double macro_f1(const Posts& gold, const std::vector<Prediction>& preds) {
  return compute_metrics(labels_of(gold), labels_of(preds)).macro_f1;
}

inline FoldOutcome run_outer_fold(const Posts& posts, const Learner& learner, const FoldPlan& plan, std::size_t k,
                                  std::uint64_t seed) {
  const std::string key = "outer-" + std::to_string(k);
  const Posts training = select_posts(posts, plan.outer_training(k));
  const Posts test = select_posts(posts, plan.outer[k]);
  const auto& inner = plan.inner[k];

  FoldOutcome out;
  out.fold = k;
  out.inner_scores.assign(learner.candidate_count(), 0.0);
  if (learner.candidate_count() > 1) {
    for (std::size_t c = 0; c < learner.candidate_count(); ++c) {
      for (std::size_t j = 0; j < inner.size(); ++j) {
        const Posts val = select_posts(training, inner[j]);
        const Posts train = without(training, inner[j]);
        const auto job = key + "/inner-" + std::to_string(j) + "/candidate-" + std::to_string(c);
        out.inner_scores[c] += macro_f1(val, learner.fit_predict(c, train, val, val, derive_seed(seed, job)));
      }
      out.inner_scores[c] /= static_cast<double>(inner.size());
      log::debug("fold {} candidate {} inner macro F1 {:.4f}", k, learner.describe(c).dump(), out.inner_scores[c]);
    }
    out.candidate = static_cast<std::size_t>(
        std::max_element(out.inner_scores.begin(), out.inner_scores.end()) - out.inner_scores.begin());
  }
  out.selected = learner.describe(out.candidate);

  const auto final_seed = derive_seed(seed, key + "/final");
  if (learner.uses_validation()) {
    const Posts val = select_posts(training, inner.front());
    out.predictions = learner.fit_predict(out.candidate, without(training, inner.front()), val, test, final_seed);
  } else {
    out.predictions = learner.fit_predict(out.candidate, training, {}, test, final_seed);
  }
  out.gold = labels_of(test);
  for (const auto& p : test) out.ids.push_back(p.id);
  out.metrics = compute_metrics(out.gold, labels_of(out.predictions));
  log::info("fold {} selected {} test macro F1 {:.4f}", k, out.selected.dump(), out.metrics.macro_f1);
  return out;
}

}  // namespace detail

/// Outer folds run as independent jobs; inside each, every candidate is
/// scored by mean macro F1 over the inner folds, and the winner is retrained
/// on the outer-training posts (holding out inner fold 0 for early stopping
/// when the learner uses validation) and scored on the outer test fold.
inline NestedCvResult run_nested_cv(const Posts& posts, const Learner& learner, const FoldPlan& plan,
                                    const RunOptions& options = {}) {
  if (plan.outer.empty() || plan.inner.size() != plan.outer.size())
    throw UsageError("run_nested_cv: fold plan has no outer folds or mismatched inner plans");
  if (learner.candidate_count() == 0) throw UsageError("run_nested_cv: learner has no candidates");
  std::set<std::string_view> ids;
  for (const auto& p : posts)
    if (!ids.insert(p.id).second) throw UsageError("run_nested_cv: duplicate post id '" + p.id + "'");
  for (const auto& fold : plan.outer)
    for (const auto& id : fold)
      if (!ids.count(id)) throw UsageError("run_nested_cv: plan id '" + id + "' is not in the corpus");

  NestedCvResult result;
  result.learner = learner.name();
  result.folds.resize(plan.outer.size());
  run_jobs(
      plan.outer.size(), options.jobs,
      [&](std::size_t k) { result.folds[k] = detail::run_outer_fold(posts, learner, plan, k, options.seed); },
      [](std::size_t k) { return "outer fold " + std::to_string(k); });
  std::vector<Metrics> per_fold;
  for (const auto& f : result.folds) per_fold.push_back(f.metrics);
  result.report = aggregate(std::move(per_fold));
  return result;
}

// ---------------------------------------------------------------------------
// Cross-domain transfer

struct CrossDomainMatrix {
  std::map<std::pair<Domain, Domain>, double> cells;  // (train, test) -> macro F1
  std::map<Domain, double> all;                       // test domain -> macro F1
  std::vector<std::string> absent;                    // reasons for missing cells

  std::optional<double> cell(Domain train, Domain test) const {
    auto it = cells.find({train, test});
    if (it == cells.end()) return std::nullopt;
    return it->second;
  }
  std::optional<double> all_row(Domain test) const {
    auto it = all.find(test);
    if (it == all.end()) return std::nullopt;
    return it->second;
  }
};

namespace detail {

/// Stratified 80/20 split; returns (train, val).
inline std::pair<Posts, Posts> split_80_20(const Posts& posts, std::uint64_t seed) {
  std::vector<IdLabel> items;
  for (const auto& p : posts) items.push_back({p.id, p.is_complaint()});
  auto folds = stratified_split(std::move(items), 5, seed);
  return {without(posts, folds[0]), select_posts(posts, folds[0])};
}

}  // namespace detail

/// One model per training domain (80/20 internal split), scored on every
/// other domain; the all-row trains on the other eight domains for each
/// test domain. Cells whose training or test bucket is empty are absent.
inline CrossDomainMatrix run_cross_domain(const Posts& posts, const Learner& learner,
                                          const RunOptions& options = {}) {
  const auto buckets = partition_by_domain(posts);
  const std::size_t candidate = learner.default_candidate();
  CrossDomainMatrix matrix;
  std::mutex mutex;

  auto note_absent = [&](std::string why) {
    std::lock_guard lock(mutex);
    log::warn("cross-domain: {}", why);
    matrix.absent.push_back(std::move(why));
  };

  // Jobs 0..8 train on one domain; jobs 9..17 produce the all-row.
  auto job = [&](std::size_t i) {
    const Domain target = kAllDomains[i % kDomainCount];
    const bool all_row = i >= kDomainCount;
    const std::string name(to_string(target));
    Posts source;
    if (all_row) {
      for (Domain d : kAllDomains)
        if (d != target) source.insert(source.end(), buckets.at(d).begin(), buckets.at(d).end());
      if (buckets.at(target).empty()) return note_absent("All -> " + name + ": no test posts");
    } else {
      source = buckets.at(target);
    }
    const std::string key = all_row ? "cell:All->" + name : "cell:" + name;
    if (source.size() < 2) return note_absent((all_row ? "All -> " : "") + name + ": too few training posts");
    auto [train, val] = learner.uses_validation() ? detail::split_80_20(source, derive_seed(options.seed, key + "/split"))
                                                  : std::pair<Posts, Posts>{source, {}};
    if (train.empty() || (learner.uses_validation() && val.empty()))
      return note_absent((all_row ? "All -> " : "") + name + ": too few training posts for a split");

    Posts test;
    std::vector<std::pair<Domain, std::size_t>> spans;  // (test domain, count)
    for (Domain d : kAllDomains) {
      if (all_row ? d != target : d == target) continue;
      const auto& b = buckets.at(d);
      if (b.empty()) {
        if (!all_row) note_absent(name + " -> " + std::string(to_string(d)) + ": no test posts");
        continue;
      }
      test.insert(test.end(), b.begin(), b.end());
      spans.push_back({d, b.size()});
    }
    if (test.empty()) return;
    const auto preds = learner.fit_predict(candidate, train, val, test, derive_seed(options.seed, key));
    std::size_t at = 0;
    std::lock_guard lock(mutex);
    for (const auto& [d, n] : spans) {
      const Posts gold(test.begin() + static_cast<std::ptrdiff_t>(at), test.begin() + static_cast<std::ptrdiff_t>(at + n));
      const std::vector<Prediction> got(preds.begin() + static_cast<std::ptrdiff_t>(at),
                                        preds.begin() + static_cast<std::ptrdiff_t>(at + n));
      const double f1 = detail::macro_f1(gold, got);
      if (all_row) matrix.all[target] = f1;
      else matrix.cells[{target, d}] = f1;
      at += n;
    }
  };
  run_jobs(2 * kDomainCount, options.jobs, job, [](std::size_t i) {
    const std::string name(to_string(kAllDomains[i % kDomainCount]));
    return i >= kDomainCount ? "cross-domain cell All -> " + name : "cross-domain row " + name;
  });
  std::sort(matrix.absent.begin(), matrix.absent.end());
  return matrix;
}

// ---------------------------------------------------------------------------
// Error export

struct OutOfFoldPrediction {
  std::string id;
  std::size_t fold = 0;
  Prediction prediction;
};

inline std::vector<OutOfFoldPrediction> out_of_fold(const NestedCvResult& result) {
  std::vector<OutOfFoldPrediction> out;
  for (const auto& f : result.folds)
    for (std::size_t i = 0; i < f.ids.size(); ++i) out.push_back({f.ids[i], f.fold, f.predictions[i]});
  return out;
}

struct ErrorRecord {
  std::string id;
  std::string text;
  Label gold = Label::non_complaint;
  Label predicted = Label::non_complaint;
  double probability = 0.0;
  std::size_t fold = 0;
  std::string category;
};

inline void to_json(nlohmann::json& j, const ErrorRecord& r) {
  j = {{"id", r.id},
       {"text", r.text},
       {"gold", std::string(to_string(r.gold))},
       {"predicted", std::string(to_string(r.predicted))},
       {"probability", r.probability},
       {"fold", r.fold},
       {"category", r.category}};
}

struct ErrorSummary {
  std::size_t posts = 0;
  std::size_t complaints = 0;
  std::size_t missed_complaints = 0;      // complaint predicted as non-complaint
  std::size_t non_complaints = 0;
  std::size_t flagged_non_complaints = 0;  // non-complaint predicted as complaint

  double missed_complaint_rate() const {
    return complaints ? static_cast<double>(missed_complaints) / static_cast<double>(complaints) : 0.0;
  }
  double flagged_non_complaint_rate() const {
    return non_complaints ? static_cast<double>(flagged_non_complaints) / static_cast<double>(non_complaints) : 0.0;
  }
};

inline void to_json(nlohmann::json& j, const ErrorSummary& s) {
  j = {{"posts", s.posts},
       {"complaints", s.complaints},
       {"complaints_misclassified", s.missed_complaints},
       {"complaint_error_rate", s.missed_complaint_rate()},
       {"non_complaints", s.non_complaints},
       {"non_complaints_misclassified", s.flagged_non_complaints},
       {"non_complaint_error_rate", s.flagged_non_complaint_rate()}};
}

struct ErrorExport {
  std::vector<ErrorRecord> records;
  ErrorSummary summary;
};

/// One record per misclassified post, in corpus order. Throws when a
/// prediction names an unknown post or a post has no prediction.
inline ErrorExport export_errors(const Posts& posts, const std::vector<OutOfFoldPrediction>& predictions) {
  std::unordered_map<std::string_view, const OutOfFoldPrediction*> by_id;
  for (const auto& p : predictions)
    if (!by_id.emplace(p.id, &p).second) throw UsageError("export_errors: duplicate prediction for '" + p.id + "'");
  if (by_id.size() != posts.size())
    throw UsageError("export_errors: " + std::to_string(by_id.size()) + " predictions for " +
                     std::to_string(posts.size()) + " posts");
  ErrorExport out;
  for (const auto& post : posts) {
    auto it = by_id.find(post.id);
    if (it == by_id.end()) throw UsageError("export_errors: no prediction for post '" + post.id + "'");
    const auto& pred = *it->second;
    ++out.summary.posts;
    if (post.is_complaint()) ++out.summary.complaints;
    else ++out.summary.non_complaints;
    if (pred.prediction.label == post.label) continue;
    if (post.is_complaint()) ++out.summary.missed_complaints;
    else ++out.summary.flagged_non_complaints;
    out.records.push_back(
        {post.id, post.text, post.label, pred.prediction.label, pred.prediction.probability, pred.fold, ""});
  }
  return out;
}

/// Up to `k` records per error direction, drawn with a fixed seed; missed
/// complaints first, each group in id order.
inline std::vector<ErrorRecord> sample_errors(const std::vector<ErrorRecord>& records, std::size_t k,
                                              std::uint64_t seed) {
  std::vector<ErrorRecord> out;
  for (Label gold : {Label::complaint, Label::non_complaint}) {
    std::vector<ErrorRecord> group;
    for (const auto& r : records)
      if (r.gold == gold) group.push_back(r);
    std::sort(group.begin(), group.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::mt19937_64 rng(derive_seed(seed, "errors-" + std::string(to_string(gold))));
    std::shuffle(group.begin(), group.end(), rng);
    group.resize(std::min(k, group.size()));
    std::sort(group.begin(), group.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    out.insert(out.end(), group.begin(), group.end());
  }
  return out;
}

}  // namespace complaints
