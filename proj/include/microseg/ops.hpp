#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "microseg/tensor.hpp"

namespace microseg {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// c[m x p] += a[m x k] * b[k x p]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * p;
    const double* arow = a + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = b + l * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x p] += a[m x k] * b[p x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * p;
    for (std::size_t j = 0; j < p; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// c[k x p] += a[m x k]^T * b[m x p]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * p;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      double* crow = c + l * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

/// Matrix product a[M x K] * b[K x P].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  Tensor out = Tensor::zeros({m, p});
  detail::gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(),
                  m, k, p);
  detail::record(out, {&a, &b}, [a, b, out, m, k, p]() {
    const double* g = out.grad().data();
    if (a.requires_grad()) {
      detail::gemm_nt(g, b.data().data(), detail::grad_buffer(a).data(), m, p,
                      k);
    }
    if (b.requires_grad()) {
      detail::gemm_tn(a.data().data(), g, detail::grad_buffer(b).data(), m, k,
                      p);
    }
  });
  return out;
}

/// a[M x K] * b[P x K]^T, without materializing the transpose.
inline Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_transposed");
  detail::require_matrix(b, "matmul_transposed");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_transposed: inner dimensions differ, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), p = b.rows();
  Tensor out = Tensor::zeros({m, p});
  detail::gemm_nt(a.data().data(), b.data().data(), out.mutable_data().data(),
                  m, k, p);
  detail::record(out, {&a, &b}, [a, b, out, m, k, p]() {
    const double* g = out.grad().data();
    if (a.requires_grad()) {
      detail::gemm_nn(g, b.data().data(), detail::grad_buffer(a).data(), m, p,
                      k);
    }
    if (b.requires_grad()) {
      // db[p x k] += g^T[p x m] * a[m x k]
      detail::gemm_tn(g, a.data().data(), detail::grad_buffer(b).data(), m, p,
                      k);
    }
  });
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  Tensor out(a.shape(), std::move(v));
  detail::record(out, {&a, &b}, [a, b, out]() {
    const auto g = out.grad();
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto dst = detail::grad_buffer(*t);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
  return out;
}

/// Adds bias[D] to every row of x[T x D].
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_matrix(x, "add_bias");
  if (bias.size() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not fit " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] += bias[c];
  Tensor out(x.shape(), std::move(v));
  detail::record(out, {&x, &bias}, [x, bias, out, rows, cols]() {
    const auto g = out.grad();
    if (x.requires_grad()) {
      auto dx = detail::grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto db = detail::grad_buffer(bias);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
    }
  });
  return out;
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  Tensor out(a.shape(), std::move(v));
  detail::record(out, {&a, &b}, [a, b, out]() {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto da = detail::grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto db = detail::grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
    }
  });
  return out;
}

inline Tensor scale(const Tensor& x, double factor) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * factor;
  Tensor out(x.shape(), std::move(v));
  detail::record(out, {&x}, [x, out, factor]() {
    const auto g = out.grad();
    auto dx = detail::grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
  });
  return out;
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > 0.0 ? x[i] : 0.0;
  Tensor out(x.shape(), std::move(v));
  detail::record(out, {&x}, [x, out]() {
    const auto g = out.grad();
    auto dx = detail::grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) dx[i] += g[i];
  });
  return out;
}

/// Sum of all elements as a scalar tensor.
inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  detail::record(out, {&x}, [x, out]() {
    const double g = out.grad()[0];
    auto dx = detail::grad_buffer(x);
    for (auto& d : dx) d += g;
  });
  return out;
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * cols;
    double* o = v.data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - peak);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  Tensor out(x.shape(), std::move(v));
  detail::record(out, {&x}, [x, out, rows, cols]() {
    const auto g = out.grad();
    const auto y = out.data();
    auto dx = detail::grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
      for (std::size_t c = 0; c < cols; ++c)
        dx[base + c] += y[base + c] * (g[base + c] - dot);
    }
  });
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row standardization of x[T x D] followed by gain/bias of length D.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = kLayerNormEps) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain.size() != cols || bias.size() != cols) {
    throw DimensionError("layer_norm: gain/bias length must equal " +
                         std::to_string(cols));
  }
  std::vector<double> normalized(x.size());
  std::vector<double> inv_std(rows);
  std::vector<double> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double n = (in[c] - mean) * inv_std[r];
      normalized[r * cols + c] = n;
      v[r * cols + c] = n * gain[c] + bias[c];
    }
  }
  Tensor out(x.shape(), std::move(v));
  detail::record(out, {&x, &gain, &bias},
                 [x, gain, bias, out, rows, cols,
                  normalized = std::move(normalized),
                  inv_std = std::move(inv_std)]() {
    const auto g = out.grad();
    if (gain.requires_grad() || bias.requires_grad()) {
      auto dg = gain.requires_grad() ? detail::grad_buffer(gain)
                                     : std::span<double>{};
      auto db = bias.requires_grad() ? detail::grad_buffer(bias)
                                     : std::span<double>{};
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          if (!dg.empty()) dg[c] += g[i] * normalized[i];
          if (!db.empty()) db[c] += g[i];
        }
    }
    if (x.requires_grad()) {
      auto dx = detail::grad_buffer(x);
      const double d = static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dn = 0.0, mean_dn_n = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const double dn = g[i] * gain[c];
          mean_dn += dn;
          mean_dn_n += dn * normalized[i];
        }
        mean_dn /= d;
        mean_dn_n /= d;
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const double dn = g[i] * gain[c];
          dx[i] += inv_std[r] * (dn - mean_dn - normalized[i] * mean_dn_n);
        }
      }
    }
  });
  return out;
}

/// "Same"-padded dilated convolution along time.
/// x: [T x Cin], kernel: [k x Cin x Cout] with odd k. Tap j reads
/// x[t + (j - k/2) * dilation].
inline Tensor dilated_conv1d(const Tensor& x, const Tensor& kernel,
                             std::size_t dilation) {
  detail::require_matrix(x, "dilated_conv1d");
  if (kernel.rank() != 3) {
    throw DimensionError("dilated_conv1d: kernel must be [k x Cin x Cout], got " +
                         shape_str(kernel.shape()));
  }
  const std::size_t k = kernel.dim(0), cin = kernel.dim(1), cout = kernel.dim(2);
  if (k % 2 == 0) {
    throw DimensionError("dilated_conv1d: kernel size must be odd, got " +
                         std::to_string(k));
  }
  if (dilation == 0) throw DimensionError("dilated_conv1d: dilation must be >= 1");
  if (x.cols() != cin) {
    throw DimensionError("dilated_conv1d: input " + shape_str(x.shape()) +
                         " does not match kernel " + shape_str(kernel.shape()));
  }
  const std::size_t steps = x.rows();
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const auto d = static_cast<std::ptrdiff_t>(dilation);
  const auto len = static_cast<std::ptrdiff_t>(steps);

  Tensor out = Tensor::zeros({steps, cout});
  {
    const double* xd = x.data().data();
    const double* kd = kernel.data().data();
    double* od = out.mutable_data().data();
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t offset = (static_cast<std::ptrdiff_t>(j) - half) * d;
      const double* tap = kd + j * cin * cout;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -offset);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len, len - offset);
      if (lo >= hi) continue;
      detail::gemm_nn(xd + (lo + offset) * static_cast<std::ptrdiff_t>(cin), tap,
                      od + lo * static_cast<std::ptrdiff_t>(cout),
                      static_cast<std::size_t>(hi - lo), cin, cout);
    }
  }
  detail::record(out, {&x, &kernel},
                 [x, kernel, out, k, cin, cout, half, d, len]() {
    const double* g = out.grad().data();
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t offset = (static_cast<std::ptrdiff_t>(j) - half) * d;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -offset);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len, len - offset);
      if (lo >= hi) continue;
      const auto n = static_cast<std::size_t>(hi - lo);
      const auto xrow = (lo + offset) * static_cast<std::ptrdiff_t>(cin);
      const auto grow = lo * static_cast<std::ptrdiff_t>(cout);
      if (x.requires_grad()) {
        detail::gemm_nt(g + grow, kernel.data().data() + j * cin * cout,
                        detail::grad_buffer(x).data() + xrow, n, cout, cin);
      }
      if (kernel.requires_grad()) {
        detail::gemm_tn(x.data().data() + xrow, g + grow,
                        detail::grad_buffer(kernel).data() + j * cin * cout, n,
                        cin, cout);
      }
    }
  });
  return out;
}

/// Columns [begin, begin + width) of x.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t width) {
  detail::require_matrix(x, "slice_cols");
  if (begin + width > x.cols()) {
    throw DimensionError("slice_cols: range exceeds " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> v(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * cols + begin, width, v.data() + r * width);
  Tensor out({rows, width}, std::move(v));
  detail::record(out, {&x}, [x, out, rows, cols, begin, width]() {
    const auto g = out.grad();
    auto dx = detail::grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c)
        dx[r * cols + begin + c] += g[r * width + c];
  });
  return out;
}

/// Horizontal concatenation of equally tall matrices.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  std::vector<double> v(rows * cols);
  std::size_t at = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().data() + r * w, w, v.data() + r * cols + at);
    at += w;
  }
  Tensor out({rows, cols}, std::move(v));
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  detail::record_if(needs, out, [parts, out, rows, cols]() {
    const auto g = out.grad();
    std::size_t at = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.cols();
      if (p.requires_grad()) {
        auto dp = detail::grad_buffer(p);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) dp[r * w + c] += g[r * cols + at + c];
      }
      at += w;
    }
  });
  return out;
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate). Identity when rate == 0.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) return mul(x, Tensor::zeros(x.shape()));
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(x.size());
  const double survivor = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = keep(rng) ? survivor : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace microseg
