#pragma once

// Central finite-difference gradient checker used across the test suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "slicerec/tensor.hpp"

namespace slicerec::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[index]"
  std::size_t checked = 0;
};

// Relative error with an absolute floor so that vanishing gradients are
// compared on an absolute scale.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares autodiff gradients of `loss_fn` against central differences with
/// step h on every element of every parameter (or at most `max_per_param`
/// evenly spaced elements when non-zero).
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                       std::vector<std::pair<std::string, Tensor>> params,
                                       double h = 1e-4, std::size_t max_per_param = 0) {
  for (auto& [_, p] : params) p.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    auto data = p.mutable_data();
    std::size_t stride = 1;
    if (max_per_param && data.size() > max_per_param) stride = data.size() / max_per_param;
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double orig = data[i];
      data[i] = orig + h;
      const double up = loss_fn().item();
      data[i] = orig - h;
      const double down = loss_fn().item();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = grad_rel_error(analytic[pi][i], numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace slicerec::testing
