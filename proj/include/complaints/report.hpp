#pragma once

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "complaints/corpus.hpp"
#include "complaints/evaluation.hpp"
#include "complaints/metrics.hpp"

namespace complaints {

// ---------------------------------------------------------------------------
// Published reference numbers, for side-by-side comparison in reports.

/// Mean over ten outer folds, in percent; std devs as fractions. Rows from
/// earlier work report only accuracy and F1.
struct ReferenceResult {
  std::string_view system;
  double accuracy, precision, recall, macro_f1;
  double accuracy_sd, precision_sd, recall_sd, macro_f1_sd;
};

inline constexpr double kNotReported = -1.0;

inline constexpr std::array<ReferenceResult, 18> kReferenceResults = {{
    {"LR-BOW + Dist. Supervision", 81.2, kNotReported, kNotReported, 79.0, kNotReported, kNotReported, kNotReported, kNotReported},
    {"LSTM", 80.2, kNotReported, kNotReported, 77.0, kNotReported, kNotReported, kNotReported, kNotReported},
    {"ULMFiT", 82.4, 81.1, 81.8, 81.2, .04, .04, .04, .05},
    {"ULMFiT + Dist. Supervision", 83.3, 82.5, 81.8, 81.9, .05, .05, .04, .05},
    {"BERT", 88.0, 87.1, 87.3, 87.0, .03, .03, .03, .03},
    {"ALBERT", 85.9, 84.8, 84.6, 84.6, .03, .03, .03, .03},
    {"RoBERTa", 87.6, 86.6, 86.9, 86.6, .03, .03, .03, .03},
    {"XLNet", 83.9, 83.2, 82.3, 82.4, .04, .04, .03, .05},
    {"M-BERT - Emotion", 87.3, 86.5, 86.0, 86.1, .03, .04, .03, .04},
    {"M-BERT - Topics", 87.5, 86.7, 86.5, 86.4, .03, .04, .03, .03},
    {"M-BERT - Emotion+Topics", 87.1, 86.4, 85.6, 85.9, .03, .03, .03, .03},
    {"BERT + Dist. Supervision", 87.8, 87.0, 86.7, 86.7, .03, .04, .03, .04},
    {"ALBERT + Dist. Supervision", 83.9, 82.6, 82.7, 82.6, .04, .04, .04, .04},
    {"RoBERTa + Dist. Supervision", 85.2, 84.4, 84.0, 84.0, .04, .05, .04, .04},
    {"XLNet + Dist. Supervision", 82.1, 81.7, 79.9, 80.1, .05, .05, .05, .05},
    {"M-BERT - Emotion + Dist. Supervision", 87.7, 86.9, 87.2, 86.8, .04, .04, .03, .04},
    {"M-BERT - Topics + Dist. Supervision", 87.6, 87.0, 86.9, 86.7, .05, .05, .04, .05},
    {"M-BERT - Emotion+Topics + Dist. Supervision", 87.8, 87.1, 87.0, 86.9, .04, .05, .04, .04},
}};

inline std::optional<ReferenceResult> reference_result(std::string_view system) {
  for (const auto& r : kReferenceResults)
    if (r.system == system) return r;
  return std::nullopt;
}

/// Reference row matching a learner name such as "bert_base_uncased+topics+distant".
inline std::optional<ReferenceResult> reference_for(std::string_view learner) {
  auto has = [&](std::string_view part) { return learner.find(part) != std::string_view::npos; };
  const bool distant = has("+distant");
  std::string system;
  if (learner.rfind("lr_bow", 0) == 0) return reference_result("LR-BOW + Dist. Supervision");
  if (has("emotion_topics")) system = "M-BERT - Emotion+Topics";
  else if (has("+emotion")) system = "M-BERT - Emotion";
  else if (has("+topics")) system = "M-BERT - Topics";
  else if (learner.rfind("bert_base_uncased", 0) == 0) system = "BERT";
  else if (learner.rfind("albert_base", 0) == 0) system = "ALBERT";
  else if (learner.rfind("roberta_base", 0) == 0) system = "RoBERTa";
  else if (learner.rfind("xlnet_base_cased", 0) == 0) system = "XLNet";
  else return std::nullopt;
  if (system.rfind("M-BERT", 0) == 0 && learner.rfind("bert_base_uncased", 0) != 0) return std::nullopt;
  if (distant) system += " + Dist. Supervision";
  return reference_result(system);
}

/// Published BERT cross-domain macro F1 (percent); rows are training
/// domains, columns test domains, both in Domain order. Diagonal is unused.
inline constexpr std::array<std::array<double, kDomainCount>, kDomainCount> kReferenceCrossDomain = {{
    {0, 49.8, 53.2, 61.8, 56.8, 59.2, 52.7, 61.1, 48.7},
    {69.7, 0, 81.5, 74.3, 76.3, 81.8, 74.1, 75.9, 84.2},
    {75.9, 80.0, 0, 73.0, 75.9, 80.7, 74.9, 75.3, 79.5},
    {57.1, 62.1, 65.1, 0, 51.6, 70.6, 62.3, 61.4, 71.8},
    {64.7, 82.4, 76.5, 75.4, 0, 78.6, 76.3, 79.4, 83.0},
    {69.3, 80.0, 77.5, 78.0, 76.4, 0, 75.2, 76.2, 82.0},
    {62.2, 73.5, 80.0, 79.2, 76.3, 75.3, 0, 70.4, 82.6},
    {72.9, 78.5, 78.9, 75.4, 78.0, 72.4, 69.7, 0, 80.8},
    {64.8, 74.8, 72.2, 69.2, 69.9, 77.9, 70.6, 70.8, 0},
}};

inline constexpr std::array<double, kDomainCount> kReferenceCrossDomainAll = {77.5, 87.7, 85.8, 80.9, 81.1,
                                                                            85.1, 81.4, 82.0, 88.2};

/// Published misclassification rates of the best model.
inline constexpr double kReferenceMissedComplaintRate = 0.1522;
inline constexpr double kReferenceFlaggedNonComplaintRate = 0.1025;

/// Manual error categories with the shares observed in a 50 + 50 sample;
/// templates for hand labeling, never computed.
struct ErrorCategory {
  std::string_view name;
  Label gold;
  double share;
};

inline constexpr std::array<ErrorCategory, 6> kErrorCategories = {{
    {"implicit", Label::complaint, 0.26},
    {"irony", Label::complaint, 0.14},
    {"shared_vocabulary", Label::non_complaint, 0.26},
    {"interrogative", Label::non_complaint, 0.22},
    {"negation", Label::non_complaint, 0.22},
    {"negative_sentiment", Label::non_complaint, 0.12},
}};

// ---------------------------------------------------------------------------
// Machine-readable documents

inline void to_json(nlohmann::json& j, const Metrics& m) {
  j = {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"macro_f1", m.macro_f1}};
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"folds", r.per_fold}, {"mean", r.mean}, {"stddev", r.stddev}};
}

inline nlohmann::json to_json(const NestedCvResult& result) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : result.folds)
    folds.push_back({{"fold", f.fold},
                     {"selected", f.selected},
                     {"inner_macro_f1", f.inner_scores},
                     {"test_size", f.ids.size()},
                     {"metrics", f.metrics}});
  nlohmann::json j = {{"experiment", "nested_cv"},
                      {"learner", result.learner},
                      {"report", result.report},
                      {"folds", folds}};
  if (auto ref = reference_for(result.learner)) j["reference"] = {{"system", ref->system}, {"macro_f1", ref->macro_f1}};
  return j;
}

inline nlohmann::json to_json(const CrossDomainMatrix& m, std::string_view learner) {
  nlohmann::json cells = nlohmann::json::object();
  for (const auto& [key, f1] : m.cells) cells[std::string(to_string(key.first))][std::string(to_string(key.second))] = f1;
  nlohmann::json all = nlohmann::json::object();
  for (const auto& [d, f1] : m.all) all[std::string(to_string(d))] = f1;
  return {{"experiment", "cross_domain"}, {"learner", learner}, {"cells", cells}, {"all", all}, {"absent", m.absent}};
}

// ---------------------------------------------------------------------------
// Aligned text tables

namespace detail {

inline std::string mean_sd(double mean, double sd) { return fmt::format("{:5.1f} ± {:.2f}", 100 * mean, sd); }

inline std::string reference_cell(double value, double sd) {
  if (value == kNotReported) return fmt::format("{:>12}", "-");
  if (sd == kNotReported) return fmt::format("{:5.1f}       ", value);
  return fmt::format("{:5.1f} ± {:.2f}", value, sd);
}

}  // namespace detail

/// Acc / P / R / F1 as percent ± std dev, one row per system, with the
/// matching published row underneath when there is one.
inline std::string format_metrics_table(const NestedCvResult& result) {
  std::string out = fmt::format("{:<44} {:>12}  {:>12}  {:>12}  {:>12}\n", "Model", "Acc", "P", "R", "F1");
  const auto& m = result.report.mean;
  const auto& s = result.report.stddev;
  out += fmt::format("{:<44} {}  {}  {}  {}\n", result.learner, detail::mean_sd(m.accuracy, s.accuracy),
                     detail::mean_sd(m.precision, s.precision), detail::mean_sd(m.recall, s.recall),
                     detail::mean_sd(m.macro_f1, s.macro_f1));
  if (auto r = reference_for(result.learner)) {
    out += fmt::format("{:<44} {}  {}  {}  {}\n", "published: " + std::string(r->system),
                       detail::reference_cell(r->accuracy, r->accuracy_sd),
                       detail::reference_cell(r->precision, r->precision_sd),
                       detail::reference_cell(r->recall, r->recall_sd),
                       detail::reference_cell(r->macro_f1, r->macro_f1_sd));
  }
  out += "\nPer fold (macro F1, selected configuration):\n";
  for (const auto& f : result.folds)
    out += fmt::format("  fold {:>2}  {:5.1f}  {}\n", f.fold, 100 * f.metrics.macro_f1, f.selected.dump());
  return out;
}

/// Train domains down, test domains across, macro F1 in percent; "-" marks
/// the diagonal and absent cells.
inline std::string format_cross_domain_table(const CrossDomainMatrix& m) {
  std::string out = fmt::format("{:<12}", "Train\\Test");
  for (Domain d : kAllDomains) out += fmt::format(" {:>11}", to_string(d));
  out += '\n';
  auto row = [&](std::string_view label, auto value_of) {
    out += fmt::format("{:<12}", label);
    for (Domain test : kAllDomains) {
      const std::optional<double> v = value_of(test);
      out += v ? fmt::format(" {:>11.1f}", 100 * *v) : fmt::format(" {:>11}", "-");
    }
    out += '\n';
  };
  for (Domain train : kAllDomains)
    row(to_string(train), [&](Domain test) { return train == test ? std::nullopt : m.cell(train, test); });
  row("All", [&](Domain test) { return m.all_row(test); });
  return out;
}

/// Complaints / non-complaints per domain plus totals.
inline std::string format_stats_table(const CorpusStats& stats) {
  std::string out = fmt::format("{:<12} {:>10} {:>15}\n", "Category", "Complaints", "Not Complaints");
  for (Domain d : kAllDomains) {
    const auto& c = stats.per_domain.at(d);
    out += fmt::format("{:<12} {:>10} {:>15}\n", to_string(d), c.complaints, c.non_complaints);
  }
  out += fmt::format("{:<12} {:>10} {:>15}\n", "Total", stats.totals.complaints, stats.totals.non_complaints);
  return out;
}

}  // namespace complaints
