#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <stdexcept>
#include <vector>

#include "spatial_diar/nn/layers.hpp"
#include "spatial_diar/nn/tensor.hpp"

namespace spatial_diar::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool finite = true;

  bool passed(double tol) const { return finite && max_rel_error < tol; }
};

/// Scalar-valued differentiable map over a set of leaf tensors.
using ScalarFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

/// Analytic gradient hook: lets tests inject faults between backward and comparison.
using GradientHook = std::function<void(std::vector<Matrix<double>>&)>;

/// Fourth-order central difference from f(x - 2h), f(x - h), f(x + h), f(x + 2h). Its
/// truncation error is O(h^4), which allows a step large enough to keep roundoff far below
/// the gradient even on coordinates with gradients near 1e-8.
inline double five_point(double fm2, double fm1, double fp1, double fp2, double h) {
  return (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h);
}

/// Finite-difference check of every coordinate of every input. Relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Matrix<double>>& inputs, double eps = 1e-3,
                                  const GradientHook& hook = {}) {
  std::vector<Var<double>> leaves;
  for (const auto& m : inputs) leaves.emplace_back(m, true);
  auto out = fn(leaves);
  if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("grad_check needs a scalar-valued map");
  GradCheckResult result;
  if (!std::isfinite(out.value().data[0])) {
    result.finite = false;
    return result;
  }
  backward(out);
  std::vector<Matrix<double>> analytic;
  for (auto& l : leaves) {
    analytic.push_back(l.grad().size() ? l.grad() : Matrix<double>(l.rows(), l.cols()));
  }
  if (hook) hook(analytic);

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto eval = [&](double offset) {
        std::vector<Var<double>> shifted;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          Matrix<double> m = inputs[k];
          if (k == i) m.data[j] += offset;
          shifted.emplace_back(std::move(m));
        }
        return fn(shifted).value().data[0];
      };
      const double f[4] = {eval(-2 * eps), eval(-eps), eval(eps), eval(2 * eps)};
      if (!std::all_of(std::begin(f), std::end(f), [](double v) { return std::isfinite(v); })) {
        result.finite = false;
        return result;
      }
      const double numeric = five_point(f[0], f[1], f[2], f[3], eps);
      const double a = analytic[i].data[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = i;
        result.worst_index = j;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

/// Finite-difference check over every coordinate of every parameter in a store. fn builds
/// the scalar objective from the store's current values.
inline GradCheckResult grad_check_params(ParamStore<double>& store, const std::function<Var<double>()>& fn,
                                         double eps = 1e-3) {
  store.zero_grad();
  auto out = fn();
  GradCheckResult result;
  if (!std::isfinite(out.value().data[0])) {
    result.finite = false;
    return result;
  }
  backward(out);
  NoGradGuard no_grad;
  std::size_t index = 0;
  for (auto& p : store.all()) {
    Matrix<double> analytic = p.var.grad().size() ? p.var.grad() : Matrix<double>(p.var.rows(), p.var.cols());
    auto& values = p.var.mutable_value().data;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      auto eval = [&](double offset) {
        values[j] = saved + offset;
        return fn().value().data[0];
      };
      const double f[4] = {eval(-2 * eps), eval(-eps), eval(eps), eval(2 * eps)};
      values[j] = saved;
      if (!std::all_of(std::begin(f), std::end(f), [](double v) { return std::isfinite(v); })) {
        result.finite = false;
        return result;
      }
      const double numeric = five_point(f[0], f[1], f[2], f[3], eps);
      const double a = analytic.data[j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (err > result.max_rel_error) {
        result = {err, index, j, a, numeric, true};
      }
    }
    ++index;
  }
  store.zero_grad();
  return result;
}

}  // namespace spatial_diar::nn
