#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "microseg/activity.hpp"
#include "microseg/metrics.hpp"

namespace microseg {

/// Raised when no quiet stretch is available to anchor integration.
class StillWindowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Half-open sample range.
struct SampleRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - begin; }
};

inline constexpr std::size_t kMinStillSamples = 50;
inline constexpr double kMaxStillVariance = 0.5;  // (m/s^2)^2

struct GravityEstimate {
  double value = 0.0;
  double variance = 0.0;
};

namespace detail {

inline void mean_var(std::span<const double> x, double& mean, double& var) {
  mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
}

}  // namespace detail

/// Mean of the vertical channel over a quiet window.
inline GravityEstimate estimate_gravity(std::span<const double> vertical, SampleRange still) {
  if (still.end > vertical.size() || still.end <= still.begin) {
    throw StillWindowError("still window [" + std::to_string(still.begin) + ", " +
                           std::to_string(still.end) + ") outside signal of " +
                           std::to_string(vertical.size()) + " samples");
  }
  if (still.length() < kMinStillSamples) {
    throw StillWindowError("still window has " + std::to_string(still.length()) +
                           " samples, need at least " + std::to_string(kMinStillSamples));
  }
  GravityEstimate g;
  detail::mean_var(vertical.subspan(still.begin, still.length()), g.value, g.variance);
  if (g.variance >= kMaxStillVariance) {
    throw StillWindowError("still window too dynamic: variance " + std::to_string(g.variance) +
                           " (m/s^2)^2 >= " + std::to_string(kMaxStillVariance));
  }
  return g;
}

/// Second-order Butterworth low-pass designed with the bilinear transform
/// (pre-warped cutoff). Coefficients normalized so a0 = 1.
struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad butterworth_lowpass(double cutoff_hz, double sample_rate) {
    if (!(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0)) {
      throw std::invalid_argument("cutoff must lie in (0, Nyquist)");
    }
    const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate);
    const double k2 = k * k;
    const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
    Biquad f;
    f.b0 = k2 * norm;
    f.b1 = 2.0 * f.b0;
    f.b2 = f.b0;
    f.a1 = 2.0 * (k2 - 1.0) * norm;
    f.a2 = (1.0 - std::numbers::sqrt2 * k + k2) * norm;
    return f;
  }

  /// Transposed direct form II, state initialized to the steady state of a
  /// constant input equal to x[0].
  std::vector<double> run(std::span<const double> x) const {
    std::vector<double> y(x.size());
    if (x.empty()) return y;
    double z2 = (b2 - a2) * x[0];
    double z1 = (b1 - a1) * x[0] + z2;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double out = b0 * x[i] + z1;
      z1 = b1 * x[i] - a1 * out + z2;
      z2 = b2 * x[i] - a2 * out;
      y[i] = out;
    }
    return y;
  }
};

/// Zero-phase low-pass: forward-backward biquad with odd-reflection padding.
inline std::vector<double> lowpass(std::span<const double> x, double cutoff_hz = 20.0,
                                   double sample_rate = kSampleRate) {
  const Biquad f = Biquad::butterworth_lowpass(cutoff_hz, sample_rate);
  const std::size_t n = x.size();
  if (n < 2) return {x.begin(), x.end()};
  const std::size_t pad = std::min<std::size_t>(9, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  auto y = f.run(ext);
  std::reverse(y.begin(), y.end());
  y = f.run(y);
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad),
          y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// Integration settings for one anchored stretch.
struct VelocityParams {
  double gravity = 9.8;       // g' subtracted from the vertical channel
  double dt = 1.0 / kSampleRate;
  SampleRange still_window;   // validated quiet range
  std::size_t initial_index = 0;  // v = 0 here; must lie in still_window
};

/// v[i0] = 0, v[t] = v[t-1] + (a[t] - g') * dt for t > i0, zero before i0.
inline std::vector<double> integrate_velocity(std::span<const double> vertical,
                                              const VelocityParams& p) {
  if (p.initial_index < p.still_window.begin || p.initial_index >= p.still_window.end) {
    throw StillWindowError("initial point " + std::to_string(p.initial_index) +
                           " lies outside the still window [" +
                           std::to_string(p.still_window.begin) + ", " +
                           std::to_string(p.still_window.end) + ")");
  }
  if (p.initial_index >= vertical.size()) {
    throw StillWindowError("initial point beyond end of signal");
  }
  std::vector<double> v(vertical.size(), 0.0);
  for (std::size_t t = p.initial_index + 1; t < vertical.size(); ++t)
    v[t] = v[t - 1] + (vertical[t] - p.gravity) * p.dt;
  return v;
}

/// Lowest-variance window of `length` samples inside [from, until).
inline SampleRange find_still_window(std::span<const double> vertical, std::size_t from,
                                     std::size_t until, std::size_t length = 100) {
  until = std::min(until, vertical.size());
  if (until < from || until - from < length || length < kMinStillSamples) {
    throw StillWindowError("no room for a " + std::to_string(length) +
                           "-sample still window before sample " + std::to_string(until) +
                           "; pass a manual still window");
  }
  // Prefix sums of the offset-shifted signal limit cancellation near g'.
  const double offset = vertical[from];
  std::vector<double> s1(until - from + 1, 0.0), s2(until - from + 1, 0.0);
  for (std::size_t i = from; i < until; ++i) {
    const double v = vertical[i] - offset;
    s1[i - from + 1] = s1[i - from] + v;
    s2[i - from + 1] = s2[i - from] + v * v;
  }
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_begin = from;
  const double n = static_cast<double>(length);
  for (std::size_t b = from; b + length <= until; ++b) {
    const double m = (s1[b - from + length] - s1[b - from]) / n;
    const double var = (s2[b - from + length] - s2[b - from]) / n - m * m;
    if (var < best) {
      best = var;
      best_begin = b;
    }
  }
  if (best >= kMaxStillVariance) {
    throw StillWindowError("no still window found before sample " + std::to_string(until) +
                           " (lowest variance " + std::to_string(best) +
                           "); pass a manual still window");
  }
  return {best_begin, best_begin + length};
}

struct RepetitionKinematics {
  int class_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  double duration_s = 0.0;
  double max_abs_velocity = 0.0;
  std::size_t peak_index = 0;
  std::vector<double> velocity;  // trace over [start, end)
};

/// Duration and peak |v| for each segment.
inline std::vector<RepetitionKinematics> per_repetition_kinematics(
    std::span<const double> velocity, const SegmentList& segments,
    double dt = 1.0 / kSampleRate) {
  std::vector<RepetitionKinematics> out;
  for (const auto& s : segments) {
    if (s.end > velocity.size() || s.end <= s.start) {
      throw std::out_of_range("segment [" + std::to_string(s.start) + ", " +
                              std::to_string(s.end) + ") outside velocity trace of " +
                              std::to_string(velocity.size()) + " samples");
    }
    RepetitionKinematics k;
    k.class_id = s.class_id;
    k.start = s.start;
    k.end = s.end;
    k.duration_s = static_cast<double>(s.length()) * dt;
    k.velocity.assign(velocity.begin() + static_cast<std::ptrdiff_t>(s.start),
                      velocity.begin() + static_cast<std::ptrdiff_t>(s.end));
    for (std::size_t t = s.start; t < s.end; ++t) {
      if (std::abs(velocity[t]) > k.max_abs_velocity) {
        k.max_abs_velocity = std::abs(velocity[t]);
        k.peak_index = t;
      }
    }
    out.push_back(std::move(k));
  }
  return out;
}

inline SegmentList chair_rising_segments(const SegmentList& segments) {
  SegmentList out;
  for (const auto& s : segments)
    if (is_chair_rising(s.class_id)) out.push_back(s);
  return out;
}

struct BoutAnchor {
  SampleRange still_window;
  std::size_t initial_index = 0;
  double gravity = 0.0;
  std::size_t first_segment = 0;  // index into the chair-rising segment list
};

struct VelocityAnalysis {
  std::vector<double> filtered;  // low-passed vertical acceleration
  std::vector<double> trace;     // velocity, same length as the input
  std::vector<BoutAnchor> bouts;
  std::vector<RepetitionKinematics> repetitions;
};

struct VelocityOptions {
  double cutoff_hz = 20.0;
  double sample_rate = kSampleRate;
  /// Preferred still-window length; shortened (down to kMinStillSamples)
  /// when the quiet stretch before a bout is shorter.
  std::size_t still_length = 200;
  /// Manual still window for the first bout; replaces the automatic search.
  std::optional<SampleRange> manual_still;
};

/// Full chair-rising pipeline on the raw vertical channel. Each bout (a run
/// of chair-rising segments not interrupted by another activity) is anchored
/// at the quietest window preceding it; velocity is not re-zeroed between
/// repetitions of one bout.
inline VelocityAnalysis analyze_chair_rising(std::span<const double> vertical,
                                             const SegmentList& segments,
                                             const VelocityOptions& options = {}) {
  VelocityAnalysis result;
  result.filtered = lowpass(vertical, options.cutoff_hz, options.sample_rate);
  result.trace.assign(vertical.size(), 0.0);
  const SegmentList chair = chair_rising_segments(segments);
  if (chair.empty()) return result;

  // Bout boundaries: a non-chair segment between two chair segments splits.
  std::vector<std::size_t> bout_starts{0};
  for (std::size_t i = 1; i < chair.size(); ++i) {
    const bool interrupted = std::any_of(segments.begin(), segments.end(), [&](const Segment& s) {
      return !is_chair_rising(s.class_id) && s.start >= chair[i - 1].end && s.end <= chair[i].start;
    });
    if (interrupted) bout_starts.push_back(i);
  }

  const double dt = 1.0 / options.sample_rate;
  std::size_t search_from = 0;
  for (std::size_t b = 0; b < bout_starts.size(); ++b) {
    const Segment& first = chair[bout_starts[b]];
    BoutAnchor anchor;
    anchor.first_segment = bout_starts[b];
    if (b == 0 && options.manual_still) {
      anchor.still_window = *options.manual_still;
    } else {
      // Never anchor before an earlier activity: its motion would be integrated.
      std::size_t from = search_from;
      for (const auto& s : segments)
        if (s.end <= first.start) from = std::max(from, s.end);
      const std::size_t room = first.start > from ? first.start - from : 0;
      const std::size_t length =
          std::max(kMinStillSamples, std::min(options.still_length, room));
      anchor.still_window = find_still_window(result.filtered, from, first.start, length);
    }
    anchor.gravity = estimate_gravity(result.filtered, anchor.still_window).value;
    anchor.initial_index = anchor.still_window.end - 1;

    VelocityParams p;
    p.gravity = anchor.gravity;
    p.dt = dt;
    p.still_window = anchor.still_window;
    p.initial_index = anchor.initial_index;
    const auto v = integrate_velocity(result.filtered, p);
    const std::size_t until = b + 1 < bout_starts.size()
                                  ? chair[bout_starts[b + 1] - 1].end
                                  : vertical.size();
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(anchor.initial_index),
              v.begin() + static_cast<std::ptrdiff_t>(until),
              result.trace.begin() + static_cast<std::ptrdiff_t>(anchor.initial_index));
    search_from = chair[b + 1 < bout_starts.size() ? bout_starts[b + 1] - 1 : chair.size() - 1].end;
    result.bouts.push_back(anchor);
  }
  result.repetitions = per_repetition_kinematics(result.trace, chair, dt);
  return result;
}

}  // namespace microseg
