#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "microseg/masking.hpp"
#include "microseg/ops.hpp"
#include "microseg/tensor.hpp"

namespace microseg {

/// Network hyperparameters. Defaults reproduce the published configuration
/// (d_model 128, 8 heads, 3 layers, dropout 0.1, 800-sample windows of 6
/// channels); ffn_dim and tcn_channels are local choices.
struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 8;
  std::size_t n_layers = 3;
  double dropout = 0.1;
  std::size_t window_len = 800;
  std::size_t n_channels = 6;
  std::size_t n_classes = 6;
  std::size_t ffn_dim = 512;
  std::size_t tcn_layers = 7;
  std::size_t tcn_channels = 64;
  std::size_t kernel_size = 3;

  std::size_t d_k() const { return d_model / n_heads; }

  /// 1 + (k - 1) * sum of dilations 1, 2, ..., 2^(layers-1).
  std::size_t receptive_field() const {
    return 1 + (kernel_size - 1) * ((std::size_t{1} << tcn_layers) - 1);
  }

  /// Human-readable list of violated constraints; empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (d_model == 0) out.emplace_back("d_model must be positive");
    if (n_heads == 0 || d_model % n_heads != 0)
      out.emplace_back("d_model must be divisible by n_heads");
    if (n_layers == 0) out.emplace_back("n_layers must be positive");
    if (dropout < 0.0 || dropout >= 1.0) out.emplace_back("dropout must lie in [0, 1)");
    if (window_len == 0) out.emplace_back("window_len must be positive");
    if (n_channels == 0) out.emplace_back("n_channels must be positive");
    if (n_classes < 2) out.emplace_back("n_classes must be at least 2");
    if (ffn_dim == 0) out.emplace_back("ffn_dim must be positive");
    if (tcn_layers == 0 || tcn_layers > 20) out.emplace_back("tcn_layers must lie in [1, 20]");
    if (tcn_channels == 0) out.emplace_back("tcn_channels must be positive");
    if (kernel_size % 2 == 0) out.emplace_back("kernel_size must be odd");
    return out;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : v) msg += " " + s + ";";
    throw std::invalid_argument(msg);
  }

  bool operator==(const ModelConfig&) const = default;
};

struct LinearParams {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
};

struct EncoderBlockParams {
  LayerNormParams attn_norm;
  AttentionParams attn;
  LayerNormParams ffn_norm;
  LinearParams ffn_in;
  LinearParams ffn_out;
};

struct EncoderParams {
  LinearParams embed;
  std::vector<EncoderBlockParams> blocks;
};

struct TcnLayerParams {
  Tensor kernel;  // [k x C x C]
  Tensor kernel_bias;
  LinearParams pointwise;
};

struct TcnParams {
  LinearParams input;
  std::vector<TcnLayerParams> layers;
  LinearParams output;
};

struct ReconstructionParams {
  LinearParams hidden;
  LinearParams output;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Training-time behaviour of a forward pass. Dropout is applied only when
/// `rng` is set and `training` is true.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardMode eval() { return {}; }
  static ForwardMode train(Rng& rng) { return {true, &rng}; }
};

inline Tensor linear(const Tensor& x, const LinearParams& p) {
  return add_bias(matmul(x, p.weight), p.bias);
}

/// Fixed sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)),
/// PE[pos, 2i+1] = cos(pos / 10000^(2i/d)).
inline Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  std::vector<double> v(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d_model; ++i) {
      const double pair = static_cast<double>(i - i % 2);
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, pair / static_cast<double>(d_model));
      v[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor({length, d_model}, std::move(v));
}

/// Per-sample linear projection to d_model plus positional encoding.
inline Tensor embed(const Tensor& window, const LinearParams& p) {
  detail::require_matrix(window, "embed");
  if (window.cols() != p.weight.rows()) {
    throw DimensionError("embed: window has " + std::to_string(window.cols()) +
                         " channels, embedding expects " +
                         std::to_string(p.weight.rows()));
  }
  const Tensor projected = linear(window, p);
  return add(projected, positional_encoding(window.rows(), p.weight.cols()));
}

/// Bidirectional multi-head self-attention. When `weights_out` is set, the
/// per-head attention matrices [T x T] are appended to it.
inline Tensor multi_head_attention(const Tensor& x, const AttentionParams& p,
                                   std::size_t n_heads,
                                   std::vector<Tensor>* weights_out = nullptr) {
  const std::size_t d_model = x.cols();
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw DimensionError("multi_head_attention: d_model " +
                         std::to_string(d_model) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t d_k = d_model / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_k));
  const Tensor q = linear(x, p.query);
  const Tensor k = linear(x, p.key);
  const Tensor v = linear(x, p.value);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor qh = slice_cols(q, h * d_k, d_k);
    const Tensor kh = slice_cols(k, h * d_k, d_k);
    const Tensor vh = slice_cols(v, h * d_k, d_k);
    const Tensor weights = softmax_rows(scale(matmul_transposed(qh, kh), inv_scale));
    if (weights_out) weights_out->push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  return linear(concat_cols(heads), p.output);
}

/// Pre-norm block: h = x + MHA(LN(x)); out = h + FFN(LN(h)).
inline Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p,
                            std::size_t n_heads, double dropout_rate,
                            ForwardMode mode) {
  const bool drop = mode.training && mode.rng != nullptr && dropout_rate > 0.0;
  Tensor attn = multi_head_attention(
      layer_norm(x, p.attn_norm.gain, p.attn_norm.bias), p.attn, n_heads);
  if (drop) attn = dropout(attn, dropout_rate, *mode.rng);
  const Tensor h = add(x, attn);
  Tensor ffn = linear(relu(linear(layer_norm(h, p.ffn_norm.gain, p.ffn_norm.bias),
                                  p.ffn_in)),
                      p.ffn_out);
  if (drop) ffn = dropout(ffn, dropout_rate, *mode.rng);
  return add(h, ffn);
}

/// Embedding followed by the stacked encoder blocks.
inline Tensor encode(const Tensor& window, const EncoderParams& p,
                     std::size_t n_heads, double dropout_rate, ForwardMode mode) {
  Tensor h = embed(window, p.embed);
  for (const auto& block : p.blocks)
    h = encoder_block(h, block, n_heads, dropout_rate, mode);
  return h;
}

/// Logits of the one-stage TCN: pointwise input projection, residual
/// dilated layers (dilation 2^i), pointwise projection to classes.
inline Tensor tcn_logits(const Tensor& features, const TcnParams& p) {
  Tensor h = linear(features, p.input);
  std::size_t dilation = 1;
  for (const auto& layer : p.layers) {
    const Tensor branch = relu(add_bias(dilated_conv1d(h, layer.kernel, dilation),
                                  layer.kernel_bias));
    h = add(h, linear(branch, layer.pointwise));
    dilation *= 2;
  }
  return linear(h, p.output);
}

/// Per-sample class probabilities [T x C].
inline Tensor tcn_classify(const Tensor& features, const TcnParams& p) {
  return softmax_rows(tcn_logits(features, p));
}

/// Two fully connected layers mapping features back to the input channels.
inline Tensor reconstruct(const Tensor& features, const ReconstructionParams& p) {
  return linear(relu(linear(features, p.hidden)), p.output);
}

namespace detail {

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

inline Tensor constant_param(std::size_t n, double value) {
  Tensor t = Tensor::full({n}, value);
  t.set_requires_grad(true);
  return t;
}

inline LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  return {uniform_tensor({in, out}, bound, rng), constant_param(out, 0.0)};
}

inline LayerNormParams init_layer_norm(std::size_t d) {
  return {constant_param(d, 1.0), constant_param(d, 0.0)};
}

}  // namespace detail

/// Per-channel affine standardization fitted on training data. The model
/// sees (x - mean) / scale; an empty normalizer is the identity.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  bool empty() const { return mean.empty(); }

  /// Mean and population standard deviation of each channel over every row
  /// of every window. Constant channels get scale 1.
  template <class Windows, class Get>
  static Normalizer fit(const Windows& windows, Get&& signal_of) {
    Normalizer n;
    std::size_t channels = 0, rows = 0;
    std::vector<double> s1, s2;
    for (const auto& w : windows) {
      const Tensor& x = signal_of(w);
      if (channels == 0) {
        channels = x.cols();
        s1.assign(channels, 0.0);
        s2.assign(channels, 0.0);
      }
      for (std::size_t t = 0; t < x.rows(); ++t)
        for (std::size_t c = 0; c < channels; ++c) {
          const double v = x[t * channels + c];
          s1[c] += v;
          s2[c] += v * v;
        }
      rows += x.rows();
    }
    if (rows == 0) return n;
    n.mean.resize(channels);
    n.scale.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      const double m = s1[c] / static_cast<double>(rows);
      const double var = std::max(0.0, s2[c] / static_cast<double>(rows) - m * m);
      n.mean[c] = m;
      n.scale[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return n;
  }

  Tensor apply(const Tensor& x) const {
    if (empty()) return Tensor(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    const std::size_t channels = x.cols();
    if (channels != mean.size()) {
      throw DimensionError("normalizer has " + std::to_string(mean.size()) +
                           " channels, window has " + std::to_string(channels));
    }
    std::vector<double> v(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = (v[i] - mean[i % channels]) / scale[i % channels];
    return Tensor(x.shape(), std::move(v));
  }

  bool operator==(const Normalizer&) const = default;
};

/// Probabilities and reconstruction from one training forward pass.
struct ForwardOutput {
  Tensor probabilities;   // [T x C], from the unmasked window
  Tensor reconstruction;  // [T x N], from the masked window
};

/// Shared Transformer encoder with a TCN classification head and a
/// fully connected reconstruction head. Both heads read features from the
/// same encoder parameters.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const auto d = config_.d_model;
    encoder_.embed = detail::init_linear(config_.n_channels, d, rng);
    for (std::size_t i = 0; i < config_.n_layers; ++i) {
      EncoderBlockParams b;
      b.attn_norm = detail::init_layer_norm(d);
      b.attn.query = detail::init_linear(d, d, rng);
      b.attn.key = detail::init_linear(d, d, rng);
      b.attn.value = detail::init_linear(d, d, rng);
      b.attn.output = detail::init_linear(d, d, rng);
      b.ffn_norm = detail::init_layer_norm(d);
      b.ffn_in = detail::init_linear(d, config_.ffn_dim, rng);
      b.ffn_out = detail::init_linear(config_.ffn_dim, d, rng);
      encoder_.blocks.push_back(std::move(b));
    }
    const auto c = config_.tcn_channels;
    const auto k = config_.kernel_size;
    tcn_.input = detail::init_linear(d, c, rng);
    for (std::size_t i = 0; i < config_.tcn_layers; ++i) {
      TcnLayerParams layer;
      layer.kernel = detail::uniform_tensor(
          {k, c, c}, std::sqrt(6.0 / static_cast<double>(k * c + c)), rng);
      layer.kernel_bias = detail::constant_param(c, 0.0);
      layer.pointwise = detail::init_linear(c, c, rng);
      tcn_.layers.push_back(std::move(layer));
    }
    tcn_.output = detail::init_linear(c, config_.n_classes, rng);
    reconstruction_.hidden = detail::init_linear(d, d, rng);
    reconstruction_.output = detail::init_linear(d, config_.n_channels, rng);
  }

  const ModelConfig& config() const { return config_; }
  const EncoderParams& encoder() const { return encoder_; }
  const TcnParams& tcn() const { return tcn_; }
  const ReconstructionParams& reconstruction() const { return reconstruction_; }
  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n) { normalizer_ = std::move(n); }

  /// Raw window -> model input. Forward functions below expect prepared input.
  Tensor prepare(const Tensor& raw_window) const {
    check_window(raw_window);
    return normalizer_.apply(raw_window);
  }

  void check_window(const Tensor& window) const {
    if (window.rank() != 2 || window.cols() != config_.n_channels) {
      throw DimensionError("window " + shape_str(window.shape()) + " expected [T x " +
                           std::to_string(config_.n_channels) + "]");
    }
  }

  Tensor features(const Tensor& window, ForwardMode mode = {}) const {
    check_window(window);
    return encode(window, encoder_, config_.n_heads, config_.dropout, mode);
  }

  Tensor classify(const Tensor& window, ForwardMode mode = {}) const {
    return tcn_classify(features(window, mode), tcn_);
  }

  Tensor reconstruct_window(const Tensor& masked_window, ForwardMode mode = {}) const {
    return reconstruct(features(masked_window, mode), reconstruction_);
  }

  /// Classification on the raw window, reconstruction on the masked window,
  /// both through the same encoder.
  ForwardOutput forward(const Tensor& window, const Tensor& masked_window,
                        ForwardMode mode = {}) const {
    return {classify(window, mode), reconstruct_window(masked_window, mode)};
  }

  std::vector<NamedTensor> encoder_parameters() const {
    std::vector<NamedTensor> out;
    add_linear(out, "encoder.embed", encoder_.embed);
    for (std::size_t i = 0; i < encoder_.blocks.size(); ++i) {
      const auto& b = encoder_.blocks[i];
      const std::string pre = "encoder.block" + std::to_string(i) + ".";
      out.push_back({pre + "attn_norm.gain", b.attn_norm.gain});
      out.push_back({pre + "attn_norm.bias", b.attn_norm.bias});
      add_linear(out, pre + "attn.query", b.attn.query);
      add_linear(out, pre + "attn.key", b.attn.key);
      add_linear(out, pre + "attn.value", b.attn.value);
      add_linear(out, pre + "attn.output", b.attn.output);
      out.push_back({pre + "ffn_norm.gain", b.ffn_norm.gain});
      out.push_back({pre + "ffn_norm.bias", b.ffn_norm.bias});
      add_linear(out, pre + "ffn_in", b.ffn_in);
      add_linear(out, pre + "ffn_out", b.ffn_out);
    }
    return out;
  }

  std::vector<NamedTensor> tcn_parameters() const {
    std::vector<NamedTensor> out;
    add_linear(out, "tcn.input", tcn_.input);
    for (std::size_t i = 0; i < tcn_.layers.size(); ++i) {
      const auto& l = tcn_.layers[i];
      const std::string pre = "tcn.layer" + std::to_string(i) + ".";
      out.push_back({pre + "kernel", l.kernel});
      out.push_back({pre + "kernel_bias", l.kernel_bias});
      add_linear(out, pre + "pointwise", l.pointwise);
    }
    add_linear(out, "tcn.output", tcn_.output);
    return out;
  }

  std::vector<NamedTensor> reconstruction_parameters() const {
    std::vector<NamedTensor> out;
    add_linear(out, "recon.hidden", reconstruction_.hidden);
    add_linear(out, "recon.output", reconstruction_.output);
    return out;
  }

  /// Encoder + TCN head.
  std::vector<NamedTensor> classification_path() const {
    auto out = encoder_parameters();
    for (auto& p : tcn_parameters()) out.push_back(std::move(p));
    return out;
  }

  /// Encoder + reconstruction head.
  std::vector<NamedTensor> reconstruction_path() const {
    auto out = encoder_parameters();
    for (auto& p : reconstruction_parameters()) out.push_back(std::move(p));
    return out;
  }

  /// Every trainable tensor in a stable order.
  std::vector<NamedTensor> parameters() const {
    auto out = encoder_parameters();
    for (auto& p : tcn_parameters()) out.push_back(std::move(p));
    for (auto& p : reconstruction_parameters()) out.push_back(std::move(p));
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
  }

  void zero_grad() const {
    for (auto p : parameters()) p.tensor.zero_grad();
  }

 private:
  static void add_linear(std::vector<NamedTensor>& out, const std::string& name,
                         const LinearParams& p) {
    out.push_back({name + ".weight", p.weight});
    out.push_back({name + ".bias", p.bias});
  }

  ModelConfig config_;
  EncoderParams encoder_;
  TcnParams tcn_;
  ReconstructionParams reconstruction_;
  Normalizer normalizer_;
};

/// Closed-form parameter count for `config`; matches Model::parameter_count.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  const auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
  const std::size_t d = c.d_model;
  const std::size_t block = 2 * d + 4 * lin(d, d) + 2 * d + lin(d, c.ffn_dim) +
                            lin(c.ffn_dim, d);
  const std::size_t tcn_layer =
      c.kernel_size * c.tcn_channels * c.tcn_channels + c.tcn_channels +
      lin(c.tcn_channels, c.tcn_channels);
  return lin(c.n_channels, d) + c.n_layers * block + lin(d, c.tcn_channels) +
         c.tcn_layers * tcn_layer + lin(c.tcn_channels, c.n_classes) + lin(d, d) +
         lin(d, c.n_channels);
}

}  // namespace microseg
