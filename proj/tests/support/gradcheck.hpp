#pragma once

// Central finite-difference oracle. Independent of the tape: it only
// perturbs raw parameter storage and re-evaluates a scalar function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "microseg/tensor.hpp"

namespace microseg::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[<index>]"
  std::size_t checked = 0;
};

/// Relative error |a - b| / max(|a|, |b|, floor).
inline double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares the stored gradient of every tensor in `params` against
/// (f(x + h) - f(x - h)) / 2h. `loss_fn` must evaluate without a tape.
inline GradCheckResult finite_difference_check(
    std::vector<std::pair<std::string, Tensor>> params,
    const std::function<double()>& loss_fn, double h = 1e-5,
    double floor = 1e-8) {
  GradCheckResult result;
  for (auto& [name, tensor] : params) {
    auto values = tensor.mutable_data();
    const auto analytic = tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn();
      values[i] = saved - h;
      const double down = loss_fn();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = rel_error(a, numeric, floor);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(a) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

}  // namespace microseg::testing
