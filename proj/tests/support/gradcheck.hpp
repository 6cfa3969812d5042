#pragma once

// Central finite-difference oracle for the autodiff engine.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sstda/numerics.hpp"

namespace sstda::testing {

/// Copy of a matrix's entries; safe to iterate over a temporary.
inline std::vector<double> values(const Matrix& m) { return m.data(); }

/// Central-difference gradient of `loss_fn` with respect to `leaf`.
inline Matrix numeric_gradient(const std::function<Tensor()>& loss_fn, Tensor leaf, double step = 1e-5) {
  Matrix out(leaf.rows(), leaf.cols());
  auto& values = leaf.mutable_value().data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = loss_fn().item();
    values[i] = saved - step;
    const double down = loss_fn().item();
    values[i] = saved;
    out.data()[i] = (up - down) / (2.0 * step);
  }
  return out;
}

/// ||a - b|| / (||a|| + ||b||), or ||a - b|| when both are ~0.
inline double relative_error(const Matrix& a, const Matrix& b) {
  double diff2 = 0.0, a2 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff2 += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    a2 += a.data()[i] * a.data()[i];
    b2 += b.data()[i] * b.data()[i];
  }
  const double denom = std::sqrt(a2) + std::sqrt(b2);
  return denom < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / denom;
}

struct GradCheckResult {
  double worst_relative = 0.0;  // max over tensors of ||a - n|| / (||a|| + ||n||)
  std::size_t entries = 0;
  std::string worst_tensor;
};

/// Compares backward() against central differences of `loss_fn` for every
/// entry of `leaves`. `loss_fn` must rebuild the graph from the leaves' current
/// values each call.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                  double step = 1e-5, const std::vector<std::string>& names = {}) {
  for (auto& l : leaves) l.zero_grad();
  backward(loss_fn());
  std::vector<Matrix> analytic;
  for (const auto& l : leaves) analytic.push_back(l.grad());

  GradCheckResult result;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto& values = leaves[k].mutable_value().data();
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn().item();
      values[i] = saved - step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k].data()[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      ++result.entries;
    }
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    const double rel = denom < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / denom;
    if (rel > result.worst_relative) {
      result.worst_relative = rel;
      result.worst_tensor = k < names.size() ? names[k] : "#" + std::to_string(k);
    }
  }
  return result;
}

}  // namespace sstda::testing
