#pragma once

// Test-only reference implementations. These use plain loops over
// std::vector and share no code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace complaints::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major: Mat[r][c]

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// relu(W^T x + b) with W stored as raw_dim x h.
inline Vec project(const Vec& x, const Mat& w, const Vec& b) {
  Vec out(b.size());
  for (std::size_t j = 0; j < b.size(); ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < x.size(); ++i) acc += w[i][j] * x[i];
    out[j] = acc > 0 ? acc : 0.0;
  }
  return out;
}

struct Gate {
  Mat gate_w;   // (d + h) x d
  Vec gate_b;   // d
  Mat shift_w;  // h x d
  Vec shift_b;  // d
  double beta = 1.0;
};

inline Mat shifting_gate(const Mat& e, const Vec& f, const Gate& p, bool cls_only = false) {
  const std::size_t d = p.gate_b.size();
  const std::size_t h = f.size();
  Mat out = e;
  const std::size_t rows = cls_only ? std::min<std::size_t>(1, e.size()) : e.size();
  for (std::size_t i = 0; i < rows; ++i) {
    Vec s(d);
    for (std::size_t k = 0; k < d; ++k) {
      double z = p.gate_b[k];
      for (std::size_t j = 0; j < d; ++j) z += p.gate_w[j][k] * e[i][j];
      for (std::size_t j = 0; j < h; ++j) z += p.gate_w[d + j][k] * f[j];
      double u = p.shift_b[k];
      for (std::size_t j = 0; j < h; ++j) u += p.shift_w[j][k] * f[j];
      s[k] = sig(z) * u;
    }
    double ne = 0, ns = 0;
    for (std::size_t k = 0; k < d; ++k) {
      ne += e[i][k] * e[i][k];
      ns += s[k] * s[k];
    }
    ne = std::sqrt(ne);
    ns = std::sqrt(ns);
    const double alpha = std::min(ne / (ns + 1e-6) * p.beta, 1.0);
    for (std::size_t k = 0; k < d; ++k) out[i][k] = e[i][k] + alpha * s[k];
  }
  return out;
}

/// Accuracy, complaint-class precision/recall and macro F1 from an explicit
/// 2x2 confusion table.
struct Metrics {
  double accuracy, precision, recall, macro_f1;
};

inline Metrics metrics_from_confusion(double tp, double fp, double fn, double tn) {
  auto safe = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  const double p_pos = safe(tp, tp + fp), r_pos = safe(tp, tp + fn);
  const double p_neg = safe(tn, tn + fn), r_neg = safe(tn, tn + fp);
  const double f_pos = safe(2 * p_pos * r_pos, p_pos + r_pos);
  const double f_neg = safe(2 * p_neg * r_neg, p_neg + r_neg);
  return {safe(tp + tn, tp + fp + fn + tn), (p_pos + p_neg) / 2, (r_pos + r_neg) / 2,
          (f_pos + f_neg) / 2};
}

inline Metrics metrics_bruteforce(const std::vector<int>& gold, const std::vector<int>& pred) {
  double table[2][2] = {{0, 0}, {0, 0}};  // [gold][pred]
  for (std::size_t i = 0; i < gold.size(); ++i) table[gold[i]][pred[i]] += 1;
  return metrics_from_confusion(table[1][1], table[0][1], table[1][0], table[0][0]);
}

/// Bias plus one weight per token occurrence, with the vocabulary searched
/// linearly.
inline double bow_decision(const std::vector<std::string>& tokens,
                           const std::vector<std::pair<std::string, double>>& weights, double bias) {
  double z = bias;
  for (const auto& t : tokens)
    for (const auto& [word, w] : weights)
      if (word == t) z += w;
  return z;
}

/// Gradient of C * sum logloss + 0.5 |w|^2 over dense count rows; the last
/// entry is the (unpenalized) bias.
inline Vec logistic_gradient(const Mat& x, const Vec& y, const Vec& w, double bias, double c) {
  Vec g(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = bias;
    for (std::size_t k = 0; k < w.size(); ++k) z += x[i][k] * w[k];
    const double r = c * (sig(z) - y[i]);
    for (std::size_t k = 0; k < w.size(); ++k) g[k] += r * x[i][k];
    g[w.size()] += r;
  }
  for (std::size_t k = 0; k < w.size(); ++k) g[k] += w[k];
  return g;
}

}  // namespace complaints::oracle
