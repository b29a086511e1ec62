#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "complaints/corpus.hpp"
#include "complaints/error.hpp"
#include "complaints/seeding.hpp"

namespace complaints {

using IdSet = std::vector<std::string>;

/// Nested cross-validation assignment: `outer[k]` is the k-th test fold and
/// `inner[k]` partitions the ids outside it. Ids inside a fold are sorted.
struct FoldPlan {
  std::vector<IdSet> outer;
  std::vector<std::vector<IdSet>> inner;
  std::uint64_t seed = 0;

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;

  /// Ids of every outer fold except `k`, sorted.
  IdSet outer_training(std::size_t k) const {
    IdSet ids;
    for (std::size_t j = 0; j < outer.size(); ++j)
      if (j != k) ids.insert(ids.end(), outer[j].begin(), outer[j].end());
    std::sort(ids.begin(), ids.end());
    return ids;
  }
};

inline constexpr std::size_t kOuterFolds = 10;
inline constexpr std::size_t kInnerFolds = 3;
inline constexpr std::size_t kMinPlanPosts = 30;

namespace detail {

struct IdLabel {
  std::string id;
  bool complaint;
};

// Fold i holds n/k posts, plus one for the first n%k folds. Each fold gets
// floor(P * size / n) complaints, and the leftover complaints go to the
// subset of folds that minimizes the largest gap between a fold's complaint
// ratio and the corpus ratio. Each class is shuffled before dealing.
inline std::vector<std::size_t> complaint_quota(std::size_t n, std::size_t positives,
                                                const std::vector<std::size_t>& sizes) {
  const std::size_t k = sizes.size();
  const double ratio = static_cast<double>(positives) / static_cast<double>(n);
  std::vector<std::size_t> quota(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    quota[i] = positives * sizes[i] / n;
    assigned += quota[i];
  }
  const std::size_t extra = positives - assigned;
  auto gap = [&](std::size_t i, std::size_t q) {
    if (sizes[i] == 0) return q == 0 ? 0.0 : 2.0;
    return std::abs(static_cast<double>(q) / static_cast<double>(sizes[i]) - ratio);
  };
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  if (k <= 16) {
    double best = 2.0;
    std::uint32_t best_mask = 0;
    for (std::uint32_t mask = 0; mask < (1u << k); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != extra) continue;
      double worst = 0.0;
      for (std::size_t i = 0; i < k; ++i) worst = std::max(worst, gap(i, quota[i] + ((mask >> i) & 1u)));
      if (worst < best - 1e-15) {
        best = worst;
        best_mask = mask;
      }
    }
    for (std::size_t i = 0; i < k; ++i) quota[i] += (best_mask >> i) & 1u;
    return quota;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return gap(a, quota[a] + 1) < gap(b, quota[b] + 1);
  });
  for (std::size_t j = 0; j < extra; ++j) ++quota[order[j]];
  return quota;
}

inline std::vector<IdSet> stratified_split(std::vector<IdLabel> items, std::size_t k,
                                           std::uint64_t seed) {
  std::sort(items.begin(), items.end(),
            [](const IdLabel& a, const IdLabel& b) { return a.id < b.id; });
  IdSet positives, negatives;
  for (auto& it : items) (it.complaint ? positives : negatives).push_back(std::move(it.id));
  std::mt19937_64 rng(seed);
  std::shuffle(positives.begin(), positives.end(), rng);
  std::shuffle(negatives.begin(), negatives.end(), rng);
  const std::size_t n = positives.size() + negatives.size();
  std::vector<std::size_t> sizes(k);
  for (std::size_t i = 0; i < k; ++i) sizes[i] = n / k + (i < n % k ? 1 : 0);
  const auto quota = complaint_quota(n, positives.size(), sizes);
  std::vector<IdSet> folds(k);
  auto pos = positives.begin();
  auto neg = negatives.begin();
  for (std::size_t i = 0; i < k; ++i) {
    folds[i].insert(folds[i].end(), std::make_move_iterator(pos), std::make_move_iterator(pos + static_cast<std::ptrdiff_t>(quota[i])));
    pos += static_cast<std::ptrdiff_t>(quota[i]);
    const auto rest = static_cast<std::ptrdiff_t>(sizes[i] - quota[i]);
    folds[i].insert(folds[i].end(), std::make_move_iterator(neg), std::make_move_iterator(neg + rest));
    neg += rest;
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

}  // namespace detail

/// Deterministic in (id set, seed): input order does not matter.
inline FoldPlan make_fold_plan(const Posts& posts, std::uint64_t seed,
                               std::size_t outer_folds = kOuterFolds,
                               std::size_t inner_folds = kInnerFolds) {
  if (posts.size() < kMinPlanPosts)
    throw UsageError("make_fold_plan: need at least " + std::to_string(kMinPlanPosts) +
                     " posts, got " + std::to_string(posts.size()));
  std::vector<detail::IdLabel> items;
  items.reserve(posts.size());
  std::set<std::string> seen;
  bool any_pos = false, any_neg = false;
  for (const auto& p : posts) {
    if (!seen.insert(p.id).second)
      throw ValidationError(items.size(), "make_fold_plan: duplicate post id '" + p.id + "'");
    items.push_back({p.id, p.is_complaint()});
    (p.is_complaint() ? any_pos : any_neg) = true;
  }
  if (!any_pos || !any_neg)
    throw UsageError("make_fold_plan: input contains a single class");

  FoldPlan plan;
  plan.seed = seed;
  plan.outer = detail::stratified_split(items, outer_folds, derive_seed(seed, "outer"));

  std::unordered_map<std::string, bool> label_of;
  for (const auto& it : items) label_of.emplace(it.id, it.complaint);
  for (std::size_t k = 0; k < outer_folds; ++k) {
    std::vector<detail::IdLabel> rest;
    for (auto& id : plan.outer_training(k)) rest.push_back({id, label_of.at(id)});
    plan.inner.push_back(detail::stratified_split(
        std::move(rest), inner_folds, derive_seed(seed, "inner-" + std::to_string(k))));
  }
  return plan;
}

/// Selects posts whose ids are in `ids`, keeping the order of `posts`.
inline Posts select_posts(const Posts& posts, const IdSet& ids) {
  std::set<std::string_view> wanted(ids.begin(), ids.end());
  Posts out;
  for (const auto& p : posts)
    if (wanted.count(p.id)) out.push_back(p);
  return out;
}

}  // namespace complaints
