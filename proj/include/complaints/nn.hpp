#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>

#include "complaints/linalg.hpp"
#include "complaints/params.hpp"

// Building blocks with explicit backward passes. Activations are row-major
// token matrices (tokens x features); Linear weights are stored in x out so
// y = x W + b.

namespace complaints::nn {

struct Linear {
  Matrix weight;  // in x out
  Vector bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out)
      : weight(Matrix::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out))),
        bias(Vector::Zero(static_cast<Eigen::Index>(out))) {}

  Eigen::Index in() const { return weight.rows(); }
  Eigen::Index out() const { return weight.cols(); }

  Matrix forward(const Matrix& x) const {
    Matrix y = x * weight;
    y.rowwise() += bias.transpose();
    return y;
  }

  /// Accumulates into `grads`; returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& grad_y, Linear& grads) const {
    grads.weight.noalias() += x.transpose() * grad_y;
    grads.bias += grad_y.colwise().sum().transpose();
    return grad_y * weight.transpose();
  }

  void visit(const std::string& prefix, const Visitor& f) {
    f(tensor_ref(join_name(prefix, "weight"), weight));
    f(tensor_ref(join_name(prefix, "bias"), bias));
  }

  template <typename Rng>
  void init_normal(Rng& rng, Real stddev) {
    std::normal_distribution<Real> n(0.0, stddev);
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = n(rng);
    bias.setZero();
  }
};

struct LayerNorm {
  Vector gamma;
  Vector beta;
  Real eps = 1e-12;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim, Real epsilon = 1e-12)
      : gamma(Vector::Ones(static_cast<Eigen::Index>(dim))),
        beta(Vector::Zero(static_cast<Eigen::Index>(dim))),
        eps(epsilon) {}

  struct Cache {
    Matrix normalized;  // x_hat
    Vector inv_std;     // per row
  };

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    const auto n = static_cast<Real>(x.cols());
    Vector mean = x.rowwise().mean();
    Matrix centered = x.colwise() - mean;
    Vector var = centered.array().square().rowwise().sum() / n;
    Vector inv_std = (var.array() + eps).rsqrt();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Matrix y = xhat.array().rowwise() * gamma.transpose().array();
    y.rowwise() += beta.transpose();
    if (cache) {
      cache->normalized = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Matrix backward(const Matrix& grad_y, const Cache& cache, LayerNorm& grads) const {
    const auto n = static_cast<Real>(grad_y.cols());
    grads.gamma += (grad_y.array() * cache.normalized.array()).colwise().sum().transpose().matrix();
    grads.beta += grad_y.colwise().sum().transpose();
    Matrix gx_hat = grad_y.array().rowwise() * gamma.transpose().array();
    Vector mean_g = gx_hat.rowwise().sum() / n;
    Vector mean_gx = (gx_hat.array() * cache.normalized.array()).rowwise().sum() / n;
    Matrix out = gx_hat.colwise() - mean_g;
    out -= (cache.normalized.array().colwise() * mean_gx.array()).matrix();
    return out.array().colwise() * cache.inv_std.array();
  }

  void visit(const std::string& prefix, const Visitor& f) {
    f(tensor_ref(join_name(prefix, "weight"), gamma));
    f(tensor_ref(join_name(prefix, "bias"), beta));
  }
};

enum class Activation { gelu, gelu_tanh, relu };

inline Real activate(Activation a, Real x) {
  switch (a) {
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case Activation::gelu_tanh: {
      const Real c = std::sqrt(2.0 / M_PI);
      return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
    }
    case Activation::relu: return x > 0 ? x : 0.0;
  }
  return x;
}

inline Real activate_derivative(Activation a, Real x) {
  switch (a) {
    case Activation::gelu: {
      const Real cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
      const Real pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      return cdf + x * pdf;
    }
    case Activation::gelu_tanh: {
      const Real c = std::sqrt(2.0 / M_PI);
      const Real inner = c * (x + 0.044715 * x * x * x);
      const Real t = std::tanh(inner);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3 * 0.044715 * x * x);
    }
    case Activation::relu: return x > 0 ? 1.0 : 0.0;
  }
  return 1.0;
}

/// Row-wise softmax.
inline Matrix softmax_rows(const Matrix& s) {
  Matrix p = s.colwise() - s.rowwise().maxCoeff();
  p = p.array().exp();
  Vector sums = p.rowwise().sum();
  return p.array().colwise() / sums.array();
}

/// dL/dS for P = softmax_rows(S).
inline Matrix softmax_rows_backward(const Matrix& p, const Matrix& grad_p) {
  Vector dot = (grad_p.array() * p.array()).rowwise().sum();
  return p.array() * (grad_p.colwise() - dot).array();
}

template <typename Rng>
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, Real rate, Rng& rng) {
  Matrix mask = Matrix::Ones(rows, cols);
  if (rate <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const Real scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
  return mask;
}

}  // namespace complaints::nn
