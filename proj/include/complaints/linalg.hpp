#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "complaints/error.hpp"

namespace complaints {

using Real = double;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline Real sigmoid(Real x) {
  // Split branches keep exp() from overflowing for large |x|.
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline Real softplus(Real x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Binary cross-entropy of a logit against a {0,1} target.
inline Real bce_with_logit(Real logit, Real target) {
  return softplus(logit) - target * logit;
}

}  // namespace complaints
