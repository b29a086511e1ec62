#pragma once

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "complaints/corpus.hpp"
#include "complaints/error.hpp"
#include "complaints/linalg.hpp"
#include "complaints/log.hpp"
#include "complaints/metrics.hpp"
#include "complaints/model.hpp"
#include "complaints/text.hpp"

namespace complaints {

struct BowConfig {
  std::vector<Real> c_grid = {0.01, 0.1, 1.0, 10.0};
  std::size_t max_iterations = 500;
  Real gradient_tolerance = 1e-10;
  Real function_tolerance = 1e-12;

  void validate() const {
    if (c_grid.empty()) throw ConfigError("bow.c_grid: is empty");
    for (Real c : c_grid)
      if (!(c > 0)) throw ConfigError("bow.c_grid: entries must be positive");
    if (max_iterations == 0) throw ConfigError("bow.max_iterations: must be positive");
  }
};

inline void to_json(nlohmann::json& j, const BowConfig& c) {
  j = {{"c_grid", c.c_grid}, {"max_iterations", c.max_iterations}};
}

inline void merge_json(BowConfig& c, const nlohmann::json& j, const std::string& prefix = "bow") {
  if (!j.is_object()) throw ConfigError(prefix + ": expected an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "c_grid") c.c_grid = v.get<std::vector<Real>>();
      else if (k == "max_iterations") c.max_iterations = v.get<std::size_t>();
      else throw ConfigError(prefix + "." + k + ": unknown key");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(prefix + ": " + e.what());
  }
}

/// Sparse token counts for one post: (column, count) sorted by column.
using SparseCounts = std::vector<std::pair<std::size_t, Real>>;

/// Logistic regression over basic_tokenize counts.
struct BowModel {
  std::map<std::string, std::size_t> vocabulary;
  Vector weights;
  Real bias = 0.0;
  Real c = 1.0;  // inverse regularization strength

  SparseCounts features(std::string_view text) const {
    std::map<std::size_t, Real> counts;
    for (const auto& tok : basic_tokenize(text)) {
      auto it = vocabulary.find(tok);
      if (it != vocabulary.end()) counts[it->second] += 1.0;
    }
    return {counts.begin(), counts.end()};
  }

  Real decision_function(std::string_view text) const {
    Real z = bias;
    for (const auto& [col, n] : features(text)) z += weights[static_cast<Eigen::Index>(col)] * n;
    return z;
  }
};

/// Vocabulary of every token in `posts`, columns in lexicographic order.
inline std::map<std::string, std::size_t> build_vocabulary(const Posts& posts) {
  std::map<std::string, std::size_t> vocab;
  for (const auto& p : posts)
    for (auto& tok : basic_tokenize(p.text)) vocab.emplace(std::move(tok), 0);
  std::size_t col = 0;
  for (auto& [tok, index] : vocab) index = col++;
  return vocab;
}

namespace detail {

/// C * sum_i logloss_i + 0.5 |w|^2; the bias is the last parameter and is
/// not penalized.
class BowObjective final : public ceres::FirstOrderFunction {
 public:
  BowObjective(const std::vector<SparseCounts>& rows, const std::vector<Real>& targets, std::size_t dims, Real c)
      : rows_(rows), targets_(targets), dims_(dims), c_(c) {}

  bool Evaluate(const double* x, double* cost, double* gradient) const override {
    const double bias = x[dims_];
    double loss = 0.0;
    if (gradient) std::fill(gradient, gradient + dims_ + 1, 0.0);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      double z = bias;
      for (const auto& [col, n] : rows_[i]) z += x[col] * n;
      loss += bce_with_logit(z, targets_[i]);
      if (gradient) {
        const double g = c_ * (sigmoid(z) - targets_[i]);
        for (const auto& [col, n] : rows_[i]) gradient[col] += g * n;
        gradient[dims_] += g;
      }
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < dims_; ++k) {
      norm += x[k] * x[k];
      if (gradient) gradient[k] += x[k];
    }
    *cost = c_ * loss + 0.5 * norm;
    return std::isfinite(*cost);
  }

  int NumParameters() const override { return static_cast<int>(dims_ + 1); }

 private:
  const std::vector<SparseCounts>& rows_;
  const std::vector<Real>& targets_;
  std::size_t dims_;
  Real c_;
};

}  // namespace detail

/// Fits one model with a fixed C. The vocabulary comes from `train` only.
inline BowModel fit_bow_fixed(const Posts& train, Real c, const BowConfig& config = {}) {
  if (train.empty()) throw UsageError("fit_bow: empty training set");
  if (!(c > 0)) throw ConfigError("fit_bow: C must be positive");
  BowModel model;
  model.c = c;
  model.vocabulary = build_vocabulary(train);
  if (model.vocabulary.empty()) throw UsageError("fit_bow: empty vocabulary");
  std::vector<SparseCounts> rows;
  std::vector<Real> targets;
  for (const auto& p : train) {
    rows.push_back(model.features(p.text));
    targets.push_back(p.is_complaint() ? 1.0 : 0.0);
  }
  const std::size_t dims = model.vocabulary.size();
  std::vector<double> x(dims + 1, 0.0);
  ceres::GradientProblem problem(new detail::BowObjective(rows, targets, dims, c));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = static_cast<int>(config.max_iterations);
  options.gradient_tolerance = config.gradient_tolerance;
  options.function_tolerance = config.function_tolerance;
  options.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, x.data(), &summary);
  if (summary.termination_type == ceres::FAILURE)
    throw NumericError("fit_bow: optimizer failed: " + summary.message);
  if (summary.termination_type == ceres::NO_CONVERGENCE)
    log::warn("fit_bow: no convergence after {} iterations (C={})", summary.iterations.size(), c);
  model.weights = Eigen::Map<Vector>(x.data(), static_cast<Eigen::Index>(dims));
  model.bias = x[dims];
  return model;
}

template <typename PostRange>
std::vector<Prediction> predict(const BowModel& model, const PostRange& posts) {
  std::vector<Prediction> out;
  for (const auto& p : posts) {
    const Real prob = probability(model.decision_function(p.text));
    out.push_back({prob, decide(prob)});
  }
  return out;
}

/// Tries every C in the grid on `train` and keeps the model with the best
/// macro F1 on `val` (first in grid order on ties).
inline BowModel fit_bow(const Posts& train, const Posts& val, const BowConfig& config = {}) {
  config.validate();
  if (val.empty()) throw UsageError("fit_bow: empty validation set");
  std::vector<Label> gold;
  for (const auto& p : val) gold.push_back(p.label);
  BowModel best;
  double best_f1 = -1.0;
  for (Real c : config.c_grid) {
    BowModel m = fit_bow_fixed(train, c, config);
    std::vector<Label> predicted;
    for (const auto& pr : predict(m, val)) predicted.push_back(pr.label);
    const double f1 = compute_metrics(gold, predicted).macro_f1;
    log::debug("bow C={} val macro F1 {:.4f}", c, f1);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = std::move(m);
    }
  }
  return best;
}

}  // namespace complaints
