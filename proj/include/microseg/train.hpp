#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "microseg/masking.hpp"
#include "microseg/metrics.hpp"
#include "microseg/model.hpp"
#include "microseg/synth.hpp"

namespace microseg {

/// Raised when a loss becomes NaN or infinite during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  double mask_ratio = 0.8;
  std::size_t patch_len = 40;
  double eta = 500.0;
  /// Epochs without validation improvement before stopping; 0 disables.
  std::size_t patience = 0;
  /// Fraction of training windows held in for early stopping.
  double validation_fraction = 0.0;
  /// Per-class weights on the cross-entropy; empty means unweighted.
  std::vector<double> class_weights;

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (batch_size == 0) out.emplace_back("batch_size must be >= 1");
    if (epochs == 0) out.emplace_back("epochs must be >= 1");
    if (!(learning_rate > 0.0)) out.emplace_back("learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      out.emplace_back("Adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) out.emplace_back("epsilon must be > 0");
    if (mask_ratio < 0.0 || mask_ratio > 1.0) out.emplace_back("mask_ratio must lie in [0, 1]");
    if (patch_len == 0) out.emplace_back("patch_len must be positive");
    if (eta < 0.0) out.emplace_back("eta must be >= 0");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
      out.emplace_back("validation_fraction must lie in [0, 1)");
    if (patience > 0 && validation_fraction == 0.0)
      out.emplace_back("patience needs a validation_fraction > 0");
    return out;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid train config:";
    for (const auto& s : v) msg += " " + s + ";";
    throw std::invalid_argument(msg);
  }
};

// ---------------------------------------------------------------- optimizer

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of every tensor in `params` from its
/// stored gradient (a tensor without a gradient counts as zero gradient).
inline void optimizer_step(const std::vector<NamedTensor>& params, AdamState& state,
                           const AdamHyper& h) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("optimizer state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto w = t.mutable_data();
    const auto g = t.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != w.size()) throw DimensionError("optimizer state shape mismatch for " + params[k].name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.epsilon);
    }
  }
}

// ------------------------------------------------------------------- folds

struct Fold {
  std::string held_out;
  std::vector<std::string> train;
};

using FoldPlan = std::vector<Fold>;

/// Leave-one-subject-out: one fold per subject, in the given order.
inline FoldPlan make_losocv(const std::vector<std::string>& subject_ids) {
  if (subject_ids.size() < 2) {
    throw std::invalid_argument("LOSOCV needs at least 2 subjects, got " +
                                std::to_string(subject_ids.size()));
  }
  for (std::size_t i = 0; i < subject_ids.size(); ++i)
    for (std::size_t j = i + 1; j < subject_ids.size(); ++j)
      if (subject_ids[i] == subject_ids[j])
        throw std::invalid_argument("duplicate subject id '" + subject_ids[i] + "'");
  FoldPlan plan;
  for (const auto& held : subject_ids) {
    Fold f;
    f.held_out = held;
    for (const auto& s : subject_ids)
      if (s != held) f.train.push_back(s);
    plan.push_back(std::move(f));
  }
  return plan;
}

// ---------------------------------------------------------------- training

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double ce = 0.0;
  double mse = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double mse = 0.0;
  std::optional<double> validation_ce;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;
  std::size_t best_epoch = 0;
};

/// Optional callbacks fired during training.
struct TrainObserver {
  /// Subject tag of every window in the batch, before the update.
  std::function<void(std::size_t step, const std::vector<std::string>& subjects)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Training window after normalization, with everything a step needs.
struct PreparedWindow {
  Tensor input;   // normalized [T x N]
  Tensor target;  // one-hot [T x C]
  std::string subject_id;
};

inline std::vector<PreparedWindow> prepare_windows(const Model& model,
                                                   const std::vector<LabeledWindow>& windows) {
  std::vector<PreparedWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows)
    out.push_back({model.prepare(w.signal), one_hot(w.labels, model.config().n_classes),
                   w.subject_id});
  return out;
}

namespace detail {

/// Independent random streams so that the mask draws of one run never shift
/// the shuffling or dropout draws.
struct TrainStreams {
  Rng shuffle;
  Rng mask;
  Rng dropout;
  explicit TrainStreams(std::uint64_t seed)
      : shuffle(derive_seed(seed, 101)), mask(derive_seed(seed, 202)),
        dropout(derive_seed(seed, 303)) {}
};

inline std::string describe_losses(std::size_t step, double ce, double mse, double loss) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << ": L=" << loss << " L_CE=" << ce
     << " L_MSE=" << mse;
  return os.str();
}

inline std::vector<std::vector<double>> snapshot(const std::vector<NamedTensor>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

inline void restore(const std::vector<NamedTensor>& params,
                    const std::vector<std::vector<double>>& values) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    std::copy(values[k].begin(), values[k].end(), t.mutable_data().begin());
  }
}

}  // namespace detail

/// Mean unmasked cross-entropy over prepared windows in evaluation mode.
inline double evaluate_ce(const Model& model, const std::vector<PreparedWindow>& windows,
                          const std::vector<double>& class_weights = {}) {
  if (windows.empty()) return 0.0;
  double total = 0.0;
  for (const auto& w : windows)
    total += cross_entropy(model.classify(w.input), w.target, class_weights).item();
  return total / static_cast<double>(windows.size());
}

/// Simultaneous semi-supervised training: every step draws fresh masks,
/// runs the unmasked window through the classification route and the masked
/// window through the reconstruction route, and applies one Adam update to
/// all parameters from eta * L_CE + L_MSE averaged over the batch.
/// Channel statistics are fitted on `windows` and stored on `model`.
inline TrainResult train_fold(const std::vector<LabeledWindow>& windows,
                              const TrainConfig& config, Model& model,
                              const TrainObserver& observer = {}) {
  config.validate();
  if (windows.empty()) throw std::invalid_argument("train_fold: no training windows");
  const auto& mc = model.config();
  model.set_normalizer(Normalizer::fit(windows, [](const LabeledWindow& w) -> const Tensor& { return w.signal; }));
  auto prepared = prepare_windows(model, windows);
  for (const auto& w : prepared) {
    if (w.input.rows() % config.patch_len != 0) {
      throw DimensionError("window length " + std::to_string(w.input.rows()) +
                           " not divisible by patch length " + std::to_string(config.patch_len));
    }
  }
  detail::TrainStreams rng(config.seed);

  std::vector<PreparedWindow> validation;
  if (config.validation_fraction > 0.0) {
    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.shuffle);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(config.validation_fraction * static_cast<double>(prepared.size())));
    if (n_val >= prepared.size()) throw std::invalid_argument("validation slice leaves no training windows");
    std::vector<PreparedWindow> keep;
    for (std::size_t i = 0; i < order.size(); ++i)
      (i < n_val ? validation : keep).push_back(prepared[order[i]]);
    prepared = std::move(keep);
  }

  const auto params = model.parameters();
  AdamState state;
  const AdamHyper hyper{config.learning_rate, config.beta1, config.beta2, config.epsilon};
  const LossWeights weights{config.eta};
  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  std::size_t since_best = 0;
  std::size_t global_step = 0;
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.shuffle);
    EpochRecord er;
    er.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      model.zero_grad();
      StepRecord sr;
      sr.epoch = epoch;
      sr.step = ++global_step;
      if (observer.on_batch) {
        std::vector<std::string> tags;
        for (std::size_t i = b0; i < b1; ++i) tags.push_back(prepared[order[i]].subject_id);
        observer.on_batch(sr.step, tags);
      }
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& w = prepared[order[i]];
        const auto spec = sample_mask(w.input.rows(), config.patch_len, config.mask_ratio, rng.mask);
        const Tensor masked = apply_mask(w.input, spec);
        const Tensor mask = spec.sample_mask(mc.n_channels);
        Tape tape;
        TapeScope scope(tape);
        const auto mode = ForwardMode::train(rng.dropout);
        const auto out = model.forward(w.input, masked, mode);
        const Tensor ce = cross_entropy(out.probabilities, w.target, config.class_weights);
        const Tensor mse = masked_mse(w.input, out.reconstruction, mask);
        const Tensor loss = combined_loss(ce, mse, weights);
        if (!std::isfinite(loss.item())) {
          throw NumericalError(detail::describe_losses(sr.step, ce.item(), mse.item(), loss.item()));
        }
        sr.ce += ce.item() * inv;
        sr.mse += mse.item() * inv;
        sr.loss += loss.item() * inv;
        tape.backward(scale(loss, inv));
      }
      optimizer_step(params, state, hyper);
      const double n = static_cast<double>(b1 - b0);
      er.loss += sr.loss * n;
      er.ce += sr.ce * n;
      er.mse += sr.mse * n;
      seen += b1 - b0;
      result.steps.push_back(sr);
    }
    er.loss /= static_cast<double>(seen);
    er.ce /= static_cast<double>(seen);
    er.mse /= static_cast<double>(seen);
    if (!validation.empty()) {
      const double val = evaluate_ce(model, validation, config.class_weights);
      er.validation_ce = val;
      if (val < best_val) {
        best_val = val;
        best_params = detail::snapshot(params);
        result.best_epoch = epoch;
        since_best = 0;
      } else if (config.patience > 0 && ++since_best >= config.patience) {
        result.stopped_early = true;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(er);
    if (observer.on_epoch) observer.on_epoch(er);
    if (result.stopped_early) break;
  }
  if (!best_params.empty()) detail::restore(params, best_params);
  return result;
}

// --------------------------------------------------------------- inference

inline LabelSequence argmax_rows(const Tensor& probs) {
  LabelSequence out(probs.rows());
  const std::size_t c = probs.cols();
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    const auto row = probs.data().subspan(t * c, c);
    out[t] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// Per-sample class predictions from the unmasked window, dropout off.
inline std::vector<LabelSequence> predict(const Model& model,
                                          const std::vector<LabeledWindow>& windows) {
  std::vector<LabelSequence> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(argmax_rows(model.classify(model.prepare(w.signal))));
  return out;
}

/// Predictions for a whole recording cut into non-overlapping windows; the
/// tail shorter than one window is not predicted.
inline LabelSequence predict_recording(const Model& model, const Recording& rec) {
  const std::size_t t = model.config().window_len;
  LabelSequence out;
  for (const auto& labels : predict(model, windowize(rec, t, t)))
    out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

inline double sample_accuracy(const LabelSequence& truth, const LabelSequence& pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("sample_accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace microseg
