#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "microseg/ops.hpp"
#include "microseg/tensor.hpp"

namespace microseg {

/// Patch-level mask over one window. A masked patch hides every channel of
/// each of its samples.
struct MaskSpec {
  std::size_t window_len = 0;
  std::size_t patch_len = 0;
  double mask_ratio = 0.0;
  std::vector<bool> patch_mask;

  std::size_t n_patches() const { return patch_mask.size(); }
  std::size_t masked_patches() const {
    return static_cast<std::size_t>(
        std::count(patch_mask.begin(), patch_mask.end(), true));
  }
  bool sample_masked(std::size_t t) const { return patch_mask[t / patch_len]; }

  /// Per-sample, per-channel indicator (1 = masked) of shape [T x channels].
  Tensor sample_mask(std::size_t channels) const {
    std::vector<double> m(window_len * channels, 0.0);
    for (std::size_t t = 0; t < window_len; ++t)
      if (sample_masked(t)) std::fill_n(m.begin() + t * channels, channels, 1.0);
    return Tensor({window_len, channels}, std::move(m));
  }
};

inline std::size_t masked_patch_count(std::size_t n_patches, double ratio) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_patches)));
}

/// Draws a uniformly random set of exactly round(ratio * n_patches) patches.
inline MaskSpec sample_mask(std::size_t window_len, std::size_t patch_len,
                            double mask_ratio, Rng& rng) {
  if (patch_len == 0 || window_len % patch_len != 0) {
    throw DimensionError("window length " + std::to_string(window_len) +
                         " is not divisible by patch length " +
                         std::to_string(patch_len));
  }
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) {
    throw std::invalid_argument("mask ratio must lie in [0, 1], got " +
                                std::to_string(mask_ratio));
  }
  MaskSpec spec;
  spec.window_len = window_len;
  spec.patch_len = patch_len;
  spec.mask_ratio = mask_ratio;
  const std::size_t n = window_len / patch_len;
  spec.patch_mask.assign(n, false);
  const std::size_t chosen = masked_patch_count(n, mask_ratio);
  if (chosen == 0) return spec;
  // Partial Fisher-Yates: the first `chosen` slots form a uniform subset.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < chosen; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
    spec.patch_mask[order[i]] = true;
  }
  return spec;
}

/// Zero-fills masked samples of a [T x N] window; other samples are copied.
inline Tensor apply_mask(const Tensor& window, const MaskSpec& spec) {
  detail::require_matrix(window, "apply_mask");
  if (window.rows() != spec.window_len) {
    throw DimensionError("apply_mask: window " + shape_str(window.shape()) +
                         " does not match mask length " +
                         std::to_string(spec.window_len));
  }
  const std::size_t channels = window.cols();
  std::vector<double> v(window.data().begin(), window.data().end());
  for (std::size_t t = 0; t < spec.window_len; ++t)
    if (spec.sample_masked(t)) std::fill_n(v.begin() + t * channels, channels, 0.0);
  return Tensor(window.shape(), std::move(v));
}

inline constexpr double kLogClamp = 1e-12;

/// Mean cross-entropy normalized by T*C:
///   (1 / (T*C)) * sum_{t,c} -y[t,c] * log(max(p[t,c], 1e-12)).
/// Optional per-class weights multiply each class column.
inline Tensor cross_entropy(const Tensor& probs, const Tensor& onehot,
                            const std::vector<double>& class_weights = {}) {
  detail::require_matrix(probs, "cross_entropy");
  detail::require_same_shape(probs, onehot, "cross_entropy");
  const std::size_t rows = probs.rows(), cols = probs.cols();
  if (!class_weights.empty() && class_weights.size() != cols) {
    throw DimensionError("cross_entropy: class weight count " +
                         std::to_string(class_weights.size()) + " != " +
                         std::to_string(cols));
  }
  const double norm = 1.0 / static_cast<double>(rows * cols);
  auto weight = [&class_weights](std::size_t c) {
    return class_weights.empty() ? 1.0 : class_weights[c];
  };
  double acc = 0.0;
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t c = 0; c < cols; ++c) {
      const double y = onehot[t * cols + c];
      if (y != 0.0)
        acc -= weight(c) * y * std::log(std::max(probs[t * cols + c], kLogClamp));
    }
  Tensor out = Tensor::scalar(acc * norm);
  detail::record(out, {&probs}, [probs, onehot, out, rows, cols, norm,
                                 class_weights]() {
    const double g = out.grad()[0];
    auto dp = detail::grad_buffer(probs);
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = t * cols + c;
        const double w = class_weights.empty() ? 1.0 : class_weights[c];
        if (onehot[i] != 0.0 && probs[i] > kLogClamp)
          dp[i] -= g * norm * w * onehot[i] / probs[i];
      }
  });
  return out;
}

/// (1 / (N*T)) * sum_{t,n} m[t,n] * (x[t,n] - x_hat[t,n])^2. The denominator
/// is the full window size, not the masked count.
inline Tensor masked_mse(const Tensor& target, const Tensor& estimate,
                         const Tensor& mask) {
  detail::require_same_shape(target, estimate, "masked_mse");
  detail::require_same_shape(target, mask, "masked_mse");
  const std::size_t n = target.size();
  const double norm = n ? 1.0 / static_cast<double>(n) : 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == 0.0) continue;
    const double e = target[i] - estimate[i];
    acc += mask[i] * e * e;
  }
  Tensor out = Tensor::scalar(acc * norm);
  detail::record(out, {&target, &estimate},
                 [target, estimate, mask, out, n, norm]() {
    const double g = out.grad()[0];
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i] == 0.0) continue;
      const double d = 2.0 * g * norm * mask[i] * (target[i] - estimate[i]);
      if (estimate.requires_grad()) detail::grad_buffer(estimate)[i] -= d;
      if (target.requires_grad()) detail::grad_buffer(target)[i] += d;
    }
  });
  return out;
}

struct LossWeights {
  double eta = 500.0;
};

/// eta * L_CE + L_MSE.
inline Tensor combined_loss(const Tensor& ce, const Tensor& mse,
                            const LossWeights& weights) {
  if (weights.eta < 0.0) throw std::invalid_argument("eta must be >= 0");
  return add(scale(ce, weights.eta), mse);
}

inline Tensor one_hot(const std::vector<int>& labels, std::size_t n_classes) {
  std::vector<double> v(labels.size() * n_classes, 0.0);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= n_classes) {
      throw DimensionError("label " + std::to_string(labels[t]) +
                           " outside [0, " + std::to_string(n_classes) + ")");
    }
    v[t * n_classes + static_cast<std::size_t>(labels[t])] = 1.0;
  }
  return Tensor({labels.size(), n_classes}, std::move(v));
}

}  // namespace microseg
