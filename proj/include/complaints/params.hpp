#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "complaints/linalg.hpp"

namespace complaints {

/// A flat view of one trainable tensor with logical shape (rows, cols),
/// cols == 1 for vectors. `data` is in Eigen storage order (column-major).
struct TensorRef {
  std::string name;
  std::span<Real> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

inline TensorRef tensor_ref(std::string name, Matrix& m) {
  return {std::move(name), std::span<Real>(m.data(), static_cast<std::size_t>(m.size())),
          static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

inline TensorRef tensor_ref(std::string name, Vector& v) {
  return {std::move(name), std::span<Real>(v.data(), static_cast<std::size_t>(v.size())),
          static_cast<std::size_t>(v.size()), 1};
}

inline TensorRef tensor_ref(std::string name, Real& x) {
  return {std::move(name), std::span<Real>(&x, 1), 1, 1};
}

/// Parameter structs expose `void visit(const Visitor&)`; this gathers the
/// tensors in visit order, which is stable for a given structure.
using Visitor = std::function<void(TensorRef)>;

template <typename Params>
std::vector<TensorRef> collect_tensors(Params& params) {
  std::vector<TensorRef> out;
  params.visit([&](TensorRef t) { out.push_back(std::move(t)); });
  return out;
}

template <typename Params>
void zero_out(Params& params) {
  params.visit([](TensorRef t) {
    for (Real& x : t.data) x = 0.0;
  });
}

template <typename Params>
bool params_finite(Params& params, std::string* first_bad = nullptr) {
  bool ok = true;
  params.visit([&](TensorRef t) {
    if (!ok) return;
    for (Real x : t.data) {
      if (!std::isfinite(x)) {
        ok = false;
        if (first_bad) *first_bad = t.name;
        return;
      }
    }
  });
  return ok;
}

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace complaints
