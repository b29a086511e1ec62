#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "complaints/error.hpp"
#include "complaints/features.hpp"
#include "complaints/linalg.hpp"
#include "complaints/params.hpp"

// Feature injection for pre-trained encoders. External feature vectors are
// projected to an h-dimensional embedding, then a shifting gate adds a
// feature-derived displacement to every token embedding:
//
//   g_i  = sigmoid(W_g^T [e_i; f] + b_g)
//   s_i  = g_i * (W_s^T f + b_s)
//   a_i  = min(beta * |e_i| / (|s_i| + eps), 1)
//   e'_i = e_i + a_i * s_i
//
// so |e'_i - e_i| <= beta * |e_i| for every position.

namespace complaints::fusion {

inline constexpr Real kShiftEpsilon = 1e-6;

enum class Injection { per_token, cls_only };

struct ProjectionParams {
  Matrix weight;  // raw feature dim x h
  Vector bias;    // h

  ProjectionParams() = default;
  ProjectionParams(std::size_t raw_dim, std::size_t h)
      : weight(Matrix::Zero(static_cast<Eigen::Index>(raw_dim),
                            static_cast<Eigen::Index>(h))),
        bias(Vector::Zero(static_cast<Eigen::Index>(h))) {}

  std::size_t raw_dim() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t h() const { return static_cast<std::size_t>(weight.cols()); }

  void visit(const Visitor& f) {
    f(tensor_ref("projection.weight", weight));
    f(tensor_ref("projection.bias", bias));
  }
};

struct GateParams {
  Matrix gate_weight;   // (d_model + h) x d_model
  Vector gate_bias;     // d_model
  Matrix shift_weight;  // h x d_model
  Vector shift_bias;    // d_model
  Real beta = 1.0;      // fixed cap, not trained

  GateParams() = default;
  GateParams(std::size_t d_model, std::size_t h, Real beta_cap = 1.0)
      : gate_weight(Matrix::Zero(static_cast<Eigen::Index>(d_model + h),
                                 static_cast<Eigen::Index>(d_model))),
        gate_bias(Vector::Zero(static_cast<Eigen::Index>(d_model))),
        shift_weight(Matrix::Zero(static_cast<Eigen::Index>(h),
                                  static_cast<Eigen::Index>(d_model))),
        shift_bias(Vector::Zero(static_cast<Eigen::Index>(d_model))),
        beta(beta_cap) {}

  std::size_t d_model() const { return static_cast<std::size_t>(gate_weight.cols()); }
  std::size_t h() const { return static_cast<std::size_t>(shift_weight.rows()); }

  void visit(const Visitor& f) {
    f(tensor_ref("gate.gate_weight", gate_weight));
    f(tensor_ref("gate.gate_bias", gate_bias));
    f(tensor_ref("gate.shift_weight", shift_weight));
    f(tensor_ref("gate.shift_bias", shift_bias));
  }
};

/// Projection and gate together; the unit stored in a checkpoint.
struct FusionParams {
  ProjectionParams projection;
  GateParams gate;

  FusionParams() = default;
  FusionParams(std::size_t raw_dim, std::size_t h, std::size_t d_model,
               Real beta = 1.0)
      : projection(raw_dim, h), gate(d_model, h, beta) {}

  void visit(const Visitor& f) {
    projection.visit(f);
    gate.visit(f);
  }
};

inline bool valid_feature_size(std::size_t h) {
  return h == 200 || h == 400 || h == 768;
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
template <typename Rng>
void initialize(FusionParams& p, Rng& rng) {
  auto fill = [&](Matrix& m) {
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(m.rows()));
    std::uniform_real_distribution<Real> dist(-scale, scale);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  fill(p.projection.weight);
  fill(p.gate.gate_weight);
  fill(p.gate.shift_weight);
  p.projection.bias.setZero();
  p.gate.gate_bias.setZero();
  p.gate.shift_bias.setZero();
}

// ---------------------------------------------------------------------------
// Projection

struct ProjectionCache {
  Vector input;
  Vector pre_activation;
};

inline Vector project_features(const Vector& raw, const ProjectionParams& params,
                               ProjectionCache* cache = nullptr) {
  if (static_cast<std::size_t>(raw.size()) != params.raw_dim())
    throw ShapeError("project_features: bundle has raw dimension " +
                     std::to_string(raw.size()) + " but projection expects " +
                     std::to_string(params.raw_dim()));
  Vector pre = params.weight.transpose() * raw + params.bias;
  Vector out = pre.cwiseMax(0.0);
  if (cache) {
    cache->input = raw;
    cache->pre_activation = std::move(pre);
  }
  return out;
}

inline Vector project_features(const FeatureBundle& bundle,
                               const ProjectionParams& params) {
  return project_features(bundle.raw(), params);
}

/// Accumulates parameter gradients; returns d(loss)/d(raw input).
inline Vector project_features_backward(const Vector& grad_out,
                                        const ProjectionCache& cache,
                                        const ProjectionParams& params,
                                        ProjectionParams& grads) {
  Vector grad_pre =
      (cache.pre_activation.array() > 0.0).select(grad_out, Vector::Zero(grad_out.size()));
  grads.weight.noalias() += cache.input * grad_pre.transpose();
  grads.bias += grad_pre;
  return params.weight * grad_pre;
}

// ---------------------------------------------------------------------------
// Shifting gate

struct GateCache {
  Matrix input;    // L x d
  Vector feature;  // h
  Matrix gate;     // L x d, sigmoid outputs
  Vector shift_base;  // d, W_s^T f + b_s
  Matrix shift;    // L x d, g_i * shift_base
  Vector scale;    // L, alpha_i
  Vector ratio;    // L, beta |e_i| / (|s_i| + eps) before the cap
  Vector input_norm;
  Vector shift_norm;
  Injection injection = Injection::per_token;
};

inline void check_gate_params(const GateParams& p) {
  if (!(p.beta > 0.0) || !std::isfinite(p.beta))
    throw NumericError("shifting_gate: beta must be a positive finite number");
  if (!p.gate_weight.allFinite() || !p.gate_bias.allFinite() ||
      !p.shift_weight.allFinite() || !p.shift_bias.allFinite())
    throw NumericError("shifting_gate: non-finite gate parameter");
}

/// Shifts token embeddings (L x d_model) by the gated feature term. With
/// Injection::cls_only only row 0 is shifted.
inline Matrix shifting_gate(const Matrix& embeddings, const Vector& feature,
                            const GateParams& params,
                            Injection injection = Injection::per_token,
                            GateCache* cache = nullptr) {
  check_gate_params(params);
  const auto d = static_cast<Eigen::Index>(params.d_model());
  const auto h = static_cast<Eigen::Index>(params.h());
  if (embeddings.cols() != d || feature.size() != h ||
      params.gate_weight.rows() != d + h || params.gate_bias.size() != d ||
      params.shift_bias.size() != d)
    throw ShapeError("shifting_gate: embeddings " + shape_string(embeddings) +
                     ", feature " + std::to_string(feature.size()) +
                     ", gate expects d_model=" + std::to_string(d) +
                     " h=" + std::to_string(h));

  const Eigen::Index rows =
      injection == Injection::cls_only ? std::min<Eigen::Index>(1, embeddings.rows())
                                       : embeddings.rows();
  const auto top = params.gate_weight.topRows(d);
  const auto bottom = params.gate_weight.bottomRows(h);

  RowVector feature_term = (bottom.transpose() * feature + params.gate_bias).transpose();
  Matrix z = embeddings.topRows(rows) * top;
  z.rowwise() += feature_term;
  Matrix gate = z.unaryExpr([](Real x) { return sigmoid(x); });

  Vector shift_base = params.shift_weight.transpose() * feature + params.shift_bias;
  Matrix shift = gate.array().rowwise() * shift_base.transpose().array();

  Matrix out = embeddings;
  Vector scale(rows), ratio(rows), in_norm(rows), sh_norm(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    in_norm[i] = embeddings.row(i).norm();
    sh_norm[i] = shift.row(i).norm();
    ratio[i] = params.beta * in_norm[i] / (sh_norm[i] + kShiftEpsilon);
    scale[i] = std::min<Real>(ratio[i], 1.0);
    out.row(i) += scale[i] * shift.row(i);
  }
  if (cache) {
    cache->input = embeddings;
    cache->feature = feature;
    cache->gate = std::move(gate);
    cache->shift_base = std::move(shift_base);
    cache->shift = std::move(shift);
    cache->scale = std::move(scale);
    cache->ratio = std::move(ratio);
    cache->input_norm = std::move(in_norm);
    cache->shift_norm = std::move(sh_norm);
    cache->injection = injection;
  }
  return out;
}

struct GateGradients {
  Matrix embeddings;  // L x d
  Vector feature;     // h
};

/// Backward pass of shifting_gate. Accumulates into `grads`.
inline GateGradients shifting_gate_backward(const Matrix& grad_out,
                                            const GateCache& cache,
                                            const GateParams& params,
                                            GateParams& grads) {
  const auto d = static_cast<Eigen::Index>(params.d_model());
  const auto h = static_cast<Eigen::Index>(params.h());
  const Eigen::Index rows = cache.scale.size();

  GateGradients out{grad_out, Vector::Zero(h)};
  Matrix grad_shift(rows, d);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const RowVector g_out = grad_out.row(i);
    grad_shift.row(i) = cache.scale[i] * g_out;
    if (cache.ratio[i] < 1.0) {
      // scale = beta |e| / (|s| + eps) is active.
      const Real grad_scale = g_out.dot(cache.shift.row(i));
      const Real denom = cache.shift_norm[i] + kShiftEpsilon;
      const Real grad_in_norm = grad_scale * params.beta / denom;
      const Real grad_sh_norm =
          -grad_scale * params.beta * cache.input_norm[i] / (denom * denom);
      if (cache.input_norm[i] > 0.0)
        out.embeddings.row(i) += grad_in_norm * cache.input.row(i) / cache.input_norm[i];
      if (cache.shift_norm[i] > 0.0)
        grad_shift.row(i) += grad_sh_norm * cache.shift.row(i) / cache.shift_norm[i];
    }
  }

  // shift = gate .* shift_base
  Matrix grad_gate = grad_shift.array().rowwise() * cache.shift_base.transpose().array();
  Vector grad_shift_base = (grad_shift.array() * cache.gate.array()).colwise().sum().transpose();
  Matrix grad_z = grad_gate.array() * cache.gate.array() * (1.0 - cache.gate.array());

  grads.gate_weight.topRows(d).noalias() += cache.input.topRows(rows).transpose() * grad_z;
  Vector grad_z_sum = grad_z.colwise().sum().transpose();
  grads.gate_weight.bottomRows(h).noalias() += cache.feature * grad_z_sum.transpose();
  grads.gate_bias += grad_z_sum;
  out.embeddings.topRows(rows).noalias() += grad_z * params.gate_weight.topRows(d).transpose();
  out.feature.noalias() += params.gate_weight.bottomRows(h) * grad_z_sum;

  grads.shift_weight.noalias() += cache.feature * grad_shift_base.transpose();
  grads.shift_bias += grad_shift_base;
  out.feature.noalias() += params.shift_weight * grad_shift_base;
  return out;
}

/// Feature dropout mask with inverted scaling; all-ones when rate == 0.
template <typename Rng>
Vector dropout_mask(Eigen::Index size, Real rate, Rng& rng) {
  Vector mask = Vector::Ones(size);
  if (rate <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  for (Eigen::Index i = 0; i < size; ++i)
    mask[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return mask;
}

/// Batch form: project each bundle, then gate the matching embedding matrix.
inline std::vector<Matrix> combine(const std::vector<Matrix>& embeddings,
                                   const std::vector<FeatureBundle>& bundles,
                                   const ProjectionParams& projection,
                                   const GateParams& gate,
                                   Injection injection = Injection::per_token) {
  if (embeddings.size() != bundles.size())
    throw ShapeError("combine: " + std::to_string(embeddings.size()) +
                     " embedding matrices but " + std::to_string(bundles.size()) +
                     " feature bundles");
  std::vector<Matrix> out;
  out.reserve(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    Vector f = project_features(bundles[i].raw(), projection);
    out.push_back(shifting_gate(embeddings[i], f, gate, injection));
  }
  return out;
}

}  // namespace complaints::fusion
