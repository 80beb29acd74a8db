#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "microseg/activity.hpp"
#include "microseg/metrics.hpp"
#include "microseg/tensor.hpp"

namespace microseg {

/// Channel order of every recording: vertical, lateral and anterior
/// acceleration (m/s^2), then roll, pitch and yaw rate (deg/s).
namespace channel {
inline constexpr std::size_t ax = 0, ay = 1, az = 2, gx = 3, gy = 4, gz = 5;
}  // namespace channel
inline constexpr std::size_t kNumChannels = 6;

enum class PulseShape {
  half_sine,  // sin(pi * phase): one lobe
  full_sine,  // sin(2 pi * phase): positive then negative lobe
};

/// One waveform component placed at a fraction of the repetition.
struct Pulse {
  std::size_t channel;
  double amplitude;
  double begin;   // fraction of the repetition, [0, 1)
  double length;  // fraction of the repetition
  PulseShape shape;

  double at(double phase) const {
    if (phase < begin || phase >= begin + length) return 0.0;
    const double local = (phase - begin) / length;
    const double cycles = shape == PulseShape::half_sine ? 1.0 : 2.0;
    return amplitude * std::sin(cycles * std::numbers::pi * local);
  }
};

struct ActivityTemplate {
  int class_id = 0;
  double min_duration_s = 0.0;
  double max_duration_s = 0.0;
  std::vector<Pulse> pulses;
  double noise_floor = 0.0;
};

/// Background plus the five repetition classes. Vertical-axis pulses that
/// move the body are full sines so velocity returns to zero at the end of
/// each repetition.
inline std::vector<ActivityTemplate> default_templates() {
  using enum PulseShape;
  using namespace channel;
  return {
      {id(Activity::background), 0.0, 0.0, {}, 0.02},
      {id(Activity::heels_up_down), 1.0, 2.0,
       {{ax, 1.2, 0.0, 0.45, full_sine},
        {ax, -1.2, 0.55, 0.45, full_sine},
        {gy, 8.0, 0.0, 1.0, half_sine},
        {ay, 0.3, 0.2, 0.6, half_sine}},
       0.0},
      {id(Activity::knees_flexion_extension), 1.5, 3.0,
       {{ax, -1.5, 0.0, 0.45, full_sine},
        {ax, 1.5, 0.55, 0.45, full_sine},
        {gy, 20.0, 0.0, 0.5, half_sine},
        {gy, -20.0, 0.5, 0.5, half_sine},
        {az, 0.8, 0.0, 1.0, half_sine},
        {gx, 6.0, 0.1, 0.8, half_sine}},
       0.0},
      {id(Activity::trunk_flexion_extension), 2.0, 4.0,
       {{gy, -35.0, 0.0, 0.5, half_sine},
        {gy, 35.0, 0.5, 0.5, half_sine},
        {az, -2.5, 0.0, 1.0, half_sine},
        {ax, -0.6, 0.0, 1.0, half_sine},
        {gz, 6.0, 0.1, 0.8, half_sine}},
       0.0},
      {id(Activity::sit_to_stand), 1.0, 3.0,
       {{ax, 2.5, 0.2, 0.8, full_sine},
        {gy, 40.0, 0.0, 0.5, half_sine},
        {gy, -40.0, 0.5, 0.5, half_sine},
        {az, 1.5, 0.0, 0.6, half_sine}},
       0.0},
      {id(Activity::stand_to_sit), 1.0, 3.0,
       {{ax, -2.5, 0.0, 0.8, full_sine},
        {gy, 35.0, 0.0, 0.5, half_sine},
        {gy, -35.0, 0.5, 0.5, half_sine},
        {az, 1.2, 0.3, 0.7, half_sine},
        {gx, -5.0, 0.0, 1.0, half_sine}},
       0.0},
  };
}

/// Per-subject variation: amplitude and tempo per class, gap lengths,
/// gravity projection on the vertical axis, sensor noise.
struct SubjectProfile {
  std::string subject_id;
  std::vector<double> amplitude_scale = std::vector<double>(kNumActivities, 1.0);
  std::vector<double> tempo_scale = std::vector<double>(kNumActivities, 1.0);
  double gap_min_s = 0.6;
  double gap_max_s = 1.6;
  double gravity = 9.6;      // g'
  double noise_sigma = 0.03;  // m/s^2; gyro noise is 10x in deg/s

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    for (double s : amplitude_scale)
      if (s < 0.5 || s > 1.5) out.emplace_back("amplitude scale outside [0.5, 1.5]");
    for (double s : tempo_scale)
      if (s < 0.5 || s > 1.5) out.emplace_back("tempo scale outside [0.5, 1.5]");
    if (gravity < 9.0 || gravity > 9.8) out.emplace_back("gravity outside [9.0, 9.8]");
    if (!(gap_min_s > 0.0 && gap_max_s >= gap_min_s)) out.emplace_back("invalid gap range");
    if (noise_sigma < 0.0) out.emplace_back("negative noise sigma");
    return out;
  }
};

/// Draws a profile with moderate inter-subject spread.
inline SubjectProfile random_profile(const std::string& subject_id, Rng& rng) {
  SubjectProfile p;
  p.subject_id = subject_id;
  std::uniform_real_distribution<double> amp(0.75, 1.25), tempo(0.85, 1.15),
      grav(9.1, 9.75), noise(0.02, 0.05), gap(0.5, 0.9);
  for (auto& s : p.amplitude_scale) s = amp(rng);
  for (auto& s : p.tempo_scale) s = tempo(rng);
  p.gravity = grav(rng);
  p.noise_sigma = noise(rng);
  p.gap_min_s = gap(rng);
  p.gap_max_s = p.gap_min_s + 1.0;
  return p;
}

/// A bout of repetitions of one exercise. A sit_to_stand block produces
/// `repetitions` alternating sit-to-stand / stand-to-sit pairs.
struct PlanBlock {
  Activity activity;
  std::size_t repetitions;
};

using SessionPlan = std::vector<PlanBlock>;

inline SessionPlan default_plan() {
  return {{Activity::heels_up_down, 8},
          {Activity::knees_flexion_extension, 8},
          {Activity::trunk_flexion_extension, 5},
          {Activity::sit_to_stand, 5}};
}

/// Parses "heels=6,knees=6,trunk=4,chair=5".
inline SessionPlan parse_plan(const std::string& text) {
  static const std::map<std::string, Activity> names = {
      {"heels", Activity::heels_up_down},
      {"knees", Activity::knees_flexion_extension},
      {"trunk", Activity::trunk_flexion_extension},
      {"chair", Activity::sit_to_stand}};
  SessionPlan plan;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("plan entry '" + item + "' lacks '='");
    const auto name = item.substr(0, eq);
    const auto it = names.find(name);
    if (it == names.end()) {
      throw std::invalid_argument("unknown plan activity '" + name +
                                  "' (use heels, knees, trunk, chair)");
    }
    std::size_t used = 0;
    long count = 0;
    try {
      count = std::stol(item.substr(eq + 1), &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("plan entry '" + item + "' has a non-numeric count");
    }
    if (used != item.size() - eq - 1 || count <= 0) {
      throw std::invalid_argument("plan entry '" + item + "' needs a positive count");
    }
    plan.push_back({it->second, static_cast<std::size_t>(count)});
  }
  if (plan.empty()) throw std::invalid_argument("empty session plan");
  return plan;
}

inline std::string format_plan(const SessionPlan& plan) {
  std::string out;
  for (const auto& b : plan) {
    if (!out.empty()) out += ',';
    switch (b.activity) {
      case Activity::heels_up_down: out += "heels"; break;
      case Activity::knees_flexion_extension: out += "knees"; break;
      case Activity::trunk_flexion_extension: out += "trunk"; break;
      default: out += "chair"; break;
    }
    out += '=' + std::to_string(b.repetitions);
  }
  return out;
}

struct Recording {
  std::string subject_id;
  Tensor signal;  // [L x 6]
  LabelSequence labels;
  SegmentList segments;
  std::vector<double> gains;  // amplitude multiplier of each segment's template

  std::size_t length() const { return labels.size(); }
  std::vector<double> channel(std::size_t c) const {
    std::vector<double> out(length());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = signal.at(t, c);
    return out;
  }
};

/// Baseline of each channel at rest: g' on the vertical axis, the remaining
/// gravity on the anterior axis.
inline std::vector<double> resting_baseline(const SubjectProfile& p) {
  using namespace channel;
  constexpr double g = 9.81;
  std::vector<double> base(kNumChannels, 0.0);
  base[ax] = p.gravity;
  base[az] = std::sqrt(g * g - p.gravity * p.gravity);
  return base;
}

/// Peak vertical velocity of a sit-to-stand repetition: the vertical pulse
/// A sin(2 pi tau / L) integrates to A L / pi at tau = L / 2.
inline double sit_to_stand_peak_velocity(const Segment& segment, double gain,
                                         const std::vector<ActivityTemplate>& templates =
                                             default_templates()) {
  const auto& tpl = templates.at(static_cast<std::size_t>(id(Activity::sit_to_stand)));
  for (const auto& p : tpl.pulses) {
    if (p.channel != channel::ax) continue;
    const double length_s = p.length * static_cast<double>(segment.length()) / kSampleRate;
    return gain * p.amplitude * length_s / std::numbers::pi;
  }
  return 0.0;
}

/// Synthesizes one session. Rest stretches open and close the recording and
/// separate blocks; only the repetitions themselves are labeled.
inline Recording generate_recording(const SubjectProfile& profile, const SessionPlan& plan,
                                    std::uint64_t seed,
                                    const std::vector<ActivityTemplate>& templates =
                                        default_templates()) {
  using namespace channel;
  if (plan.empty()) throw std::invalid_argument("generate_recording: empty session plan");
  const auto bad = profile.violations();
  if (!bad.empty()) throw std::invalid_argument("invalid subject profile: " + bad.front());
  Rng rng(seed);
  const double fs = kSampleRate;
  auto seconds = [fs](double s) { return static_cast<std::size_t>(std::llround(s * fs)); };
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  struct Event {
    int class_id;
    std::size_t start;
    std::size_t length;
    double amplitude;
  };
  std::vector<Event> events;
  std::size_t cursor = seconds(between(3.0, 4.0));
  auto add_rep = [&](int cls) {
    const auto& tpl = templates.at(static_cast<std::size_t>(cls));
    const double dur = between(tpl.min_duration_s, tpl.max_duration_s) *
                       profile.tempo_scale[static_cast<std::size_t>(cls)];
    const double amp = profile.amplitude_scale[static_cast<std::size_t>(cls)] * between(0.9, 1.1);
    events.push_back({cls, cursor, std::max<std::size_t>(seconds(dur), 10), amp});
    cursor += events.back().length;
  };
  for (std::size_t b = 0; b < plan.size(); ++b) {
    const auto& block = plan[b];
    const bool chair = block.activity == Activity::sit_to_stand ||
                       block.activity == Activity::stand_to_sit;
    for (std::size_t r = 0; r < block.repetitions; ++r) {
      if (r > 0) cursor += seconds(between(profile.gap_min_s, profile.gap_max_s));
      if (chair) {
        add_rep(id(Activity::sit_to_stand));
        cursor += seconds(between(profile.gap_min_s, profile.gap_max_s));
        add_rep(id(Activity::stand_to_sit));
      } else {
        add_rep(id(block.activity));
      }
    }
    cursor += seconds(between(3.0, 5.0));
  }
  const std::size_t total = cursor;

  std::vector<double> signal(total * kNumChannels);
  const auto base = resting_baseline(profile);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double drift_period = between(20.0, 40.0);
  const double drift_phase = between(0.0, 2.0 * std::numbers::pi);
  for (std::size_t t = 0; t < total; ++t) {
    const double time = static_cast<double>(t) / fs;
    const double drift =
        0.005 * std::sin(2.0 * std::numbers::pi * time / drift_period + drift_phase);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      const double sigma = profile.noise_sigma * (c >= gx ? 10.0 : 1.0);
      signal[t * kNumChannels + c] = base[c] + sigma * noise(rng) + (c == ax ? drift : 0.0);
    }
  }

  Recording rec;
  rec.subject_id = profile.subject_id;
  rec.labels.assign(total, id(Activity::background));
  for (const auto& e : events) {
    const auto& tpl = templates.at(static_cast<std::size_t>(e.class_id));
    for (std::size_t i = 0; i < e.length; ++i) {
      const double phase = static_cast<double>(i) / static_cast<double>(e.length);
      const std::size_t t = e.start + i;
      for (const auto& p : tpl.pulses) signal[t * kNumChannels + p.channel] += e.amplitude * p.at(phase);
      rec.labels[t] = e.class_id;
    }
    rec.segments.push_back({e.start, e.start + e.length, e.class_id});
    rec.gains.push_back(e.amplitude);
  }
  rec.signal = Tensor({total, std::size_t{kNumChannels}}, std::move(signal));
  return rec;
}

/// A fixed-length slice of a recording with its labels.
struct LabeledWindow {
  Tensor signal;  // [T x 6]
  LabelSequence labels;
  std::string subject_id;
  std::size_t offset = 0;
};

/// Cuts a recording into windows of `window_len` every `stride` samples; a
/// tail shorter than one window is dropped.
inline std::vector<LabeledWindow> windowize(const Recording& rec, std::size_t window_len,
                                            std::size_t stride) {
  if (window_len == 0 || stride == 0) throw std::invalid_argument("window and stride must be positive");
  if (rec.length() < window_len) {
    throw std::invalid_argument("recording of " + std::to_string(rec.length()) +
                                " samples is shorter than one window (" +
                                std::to_string(window_len) + ")");
  }
  const std::size_t channels = rec.signal.cols();
  std::vector<LabeledWindow> out;
  for (std::size_t start = 0; start + window_len <= rec.length(); start += stride) {
    LabeledWindow w;
    w.subject_id = rec.subject_id;
    w.offset = start;
    const auto src = rec.signal.data().subspan(start * channels, window_len * channels);
    w.signal = Tensor({window_len, channels}, std::vector<double>(src.begin(), src.end()));
    w.labels.assign(rec.labels.begin() + static_cast<std::ptrdiff_t>(start),
                    rec.labels.begin() + static_cast<std::ptrdiff_t>(start + window_len));
    out.push_back(std::move(w));
  }
  return out;
}

/// Deterministic per-subject seeds derived from a dataset seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline std::string subject_name(std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "S%02zu", index + 1);
  return buf;
}

/// A cohort of subjects with random profiles, all following `plan`.
inline std::vector<std::pair<SubjectProfile, Recording>> generate_cohort(
    std::size_t n_subjects, const SessionPlan& plan, std::uint64_t seed) {
  std::vector<std::pair<SubjectProfile, Recording>> out;
  for (std::size_t i = 0; i < n_subjects; ++i) {
    Rng profile_rng(derive_seed(seed, 2 * i));
    SubjectProfile profile = random_profile(subject_name(i), profile_rng);
    Recording rec = generate_recording(profile, plan, derive_seed(seed, 2 * i + 1));
    out.emplace_back(std::move(profile), std::move(rec));
  }
  return out;
}

}  // namespace microseg
