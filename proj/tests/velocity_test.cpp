#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "microseg/synth.hpp"
#include "microseg/velocity.hpp"

namespace ms = microseg;

namespace {

std::vector<double> sine(double hz, std::size_t n, double amplitude = 1.0) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t)
    x[t] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(t) / 100.0);
  return x;
}

double rms(const std::vector<double>& x, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t t = from; t < to; ++t) s += x[t] * x[t];
  return std::sqrt(s / static_cast<double>(to - from));
}

ms::VelocityParams anchored(double g, std::size_t begin, std::size_t end) {
  ms::VelocityParams p;
  p.gravity = g;
  p.still_window = {begin, end};
  p.initial_index = begin;
  return p;
}

/// Gain of the zero-phase filter at `hz`, measured away from the edges.
double measured_gain(double hz) {
  const auto x = sine(hz, 4000);
  const auto y = ms::lowpass(x);
  return rms(y, 1000, 3000) / rms(x, 1000, 3000);
}

}  // namespace

TEST(Gravity, ConstantWindow) {
  const std::vector<double> x(300, 9.6);
  EXPECT_NEAR(ms::estimate_gravity(x, {50, 250}).value, 9.6, 1e-12);
}

TEST(Gravity, NoisyWindowWithinStandardErrorBound) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(200);
    for (auto& v : x) v = 9.6 + noise(rng);
    EXPECT_NEAR(ms::estimate_gravity(x, {0, 200}).value, 9.6, 0.01);
  }
}

TEST(Gravity, RejectsShortOrDynamicWindows) {
  const std::vector<double> flat(300, 9.6);
  EXPECT_THROW(ms::estimate_gravity(flat, {0, 49}), ms::StillWindowError);
  const auto moving = sine(1.0, 300, 3.0);
  try {
    ms::estimate_gravity(moving, {0, 200});
    FAIL() << "expected rejection";
  } catch (const ms::StillWindowError& e) {
    EXPECT_NE(std::string(e.what()).find("variance"), std::string::npos);
  }
}

TEST(Gravity, GeneratorRoundTrip) {
  ms::SubjectProfile profile;
  profile.subject_id = "S01";
  profile.gravity = 9.3;
  const auto rec = ms::generate_recording(profile, ms::parse_plan("chair=2"), 11);
  const auto ax = rec.channel(ms::channel::ax);
  const auto still = ms::find_still_window(ax, 0, rec.segments.front().start);
  EXPECT_NEAR(ms::estimate_gravity(ax, still).value, 9.3, 0.05);
}

TEST(Lowpass, DcGainIsOne) {
  const std::vector<double> x(500, 9.81);
  for (double v : ms::lowpass(x)) EXPECT_NEAR(v, 9.81, 1e-6 * 9.81);
  const auto f = ms::Biquad::butterworth_lowpass(20.0, 100.0);
  EXPECT_NEAR((f.b0 + f.b1 + f.b2) / (1.0 + f.a1 + f.a2), 1.0, 1e-12);
}

TEST(Lowpass, AttenuatesFortyHertzBy20dB) {
  EXPECT_LE(20.0 * std::log10(measured_gain(40.0)), -20.0);
}

TEST(Lowpass, PreservesTwoHertz) {
  EXPECT_NEAR(measured_gain(2.0), 1.0, 0.02);
}

TEST(Lowpass, ZeroPhaseKeepsSymmetricPeak) {
  std::vector<double> x(600, 0.0);
  for (std::size_t t = 250; t <= 350; ++t)
    x[t] = std::pow(std::sin(std::numbers::pi * static_cast<double>(t - 250) / 100.0), 2.0);
  const auto y = ms::lowpass(x);
  const auto peak = std::max_element(y.begin(), y.end()) - y.begin();
  EXPECT_LE(std::abs(peak - 300), 1);
}

TEST(Lowpass, RejectsCutoffAboveNyquist) {
  EXPECT_THROW(ms::Biquad::butterworth_lowpass(60.0, 100.0), std::invalid_argument);
}

TEST(Integrate, ZeroAccelerationGivesZeroVelocity) {
  const std::vector<double> x(200, 9.7);
  for (double v : ms::integrate_velocity(x, anchored(9.7, 0, 100))) EXPECT_EQ(v, 0.0);
}

TEST(Integrate, ConstantAccelerationIsExact) {
  std::vector<double> x(201, 9.8);
  for (std::size_t t = 101; t <= 200; ++t) x[t] = 10.8;
  const auto v = ms::integrate_velocity(x, anchored(9.8, 50, 101));
  EXPECT_EQ(v[100], 0.0);
  EXPECT_NEAR(v[200], 1.0, 1e-9);
}

TEST(Integrate, ConstantGravityErrorDriftsLinearly) {
  const std::vector<double> x(500, 9.6);
  const double eps = 0.03;
  const auto v = ms::integrate_velocity(x, anchored(9.6 - eps, 0, 100));
  for (std::size_t t = 0; t < 500; t += 37)
    EXPECT_NEAR(v[t], eps * static_cast<double>(t) * 0.01, 1e-12);
}

TEST(Integrate, DifferencingRecoversAcceleration) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> x(400);
  for (auto& a : x) a = 9.5 + u(rng);
  const auto v = ms::integrate_velocity(x, anchored(9.5, 0, 100));
  for (std::size_t t = 1; t < x.size(); ++t)
    EXPECT_NEAR((v[t] - v[t - 1]) / 0.01, x[t] - 9.5, 1e-9);
}

TEST(Integrate, InitialPointOutsideStillWindowRejected) {
  const std::vector<double> x(300, 9.6);
  auto p = anchored(9.6, 100, 200);
  p.initial_index = 250;
  EXPECT_THROW(ms::integrate_velocity(x, p), ms::StillWindowError);
}

TEST(Kinematics, DurationAndEmptyList) {
  const std::vector<double> v(400, 0.0);
  const auto k = ms::per_repetition_kinematics(v, {{100, 300, 4}});
  ASSERT_EQ(k.size(), 1u);
  EXPECT_NEAR(k[0].duration_s, 2.0, 1e-12);
  EXPECT_TRUE(ms::per_repetition_kinematics(v, {}).empty());
}

TEST(Kinematics, TriangularTracePeakIsApex) {
  std::vector<double> v(300, 0.0);
  for (std::size_t t = 100; t < 200; ++t)
    v[t] = -1.7 * (1.0 - std::abs(static_cast<double>(t) - 150.0) / 50.0);
  const auto k = ms::per_repetition_kinematics(v, {{100, 200, 5}});
  EXPECT_EQ(k[0].max_abs_velocity, 1.7);
  EXPECT_EQ(k[0].peak_index, 150u);
  EXPECT_EQ(k[0].velocity.size(), 100u);
}

TEST(Kinematics, OutOfBoundsSegmentRejected) {
  const std::vector<double> v(100, 0.0);
  EXPECT_THROW(ms::per_repetition_kinematics(v, {{50, 120, 4}}), std::out_of_range);
}

TEST(StillWindow, FindsQuietestStretch) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> loud(0.0, 0.5), quiet(0.0, 0.01);
  std::vector<double> x(600);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = 9.6 + (t >= 300 && t < 420 ? quiet(rng) : loud(rng));
  const auto w = ms::find_still_window(x, 0, 600, 100);
  EXPECT_GE(w.begin, 300u);
  EXPECT_LE(w.end, 420u);
  EXPECT_THROW(ms::find_still_window(x, 0, 80, 100), ms::StillWindowError);
  EXPECT_THROW(ms::find_still_window(sine(1.0, 600, 5.0), 0, 600, 100), ms::StillWindowError);
}

TEST(ChairRising, NoChairSegmentsGiveEmptyKinematics) {
  const std::vector<double> x(800, 9.6);
  const auto r = ms::analyze_chair_rising(x, {{100, 200, 1}, {300, 400, 2}});
  EXPECT_TRUE(r.repetitions.empty());
  EXPECT_EQ(r.trace.size(), x.size());
}

TEST(ChairRising, AnalyticPulsePeakRecovered) {
  // Noise-free sit-to-stand: A sin(2 pi tau / L) on top of g'.
  const double g = 9.4, amplitude = 2.0, length_s = 1.2;
  std::vector<double> x(900, g);
  const std::size_t start = 300, len = 120;
  for (std::size_t i = 0; i < len; ++i)
    x[start + i] += amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / len);
  const auto r = ms::analyze_chair_rising(x, {{start, start + len, 4}});
  ASSERT_EQ(r.repetitions.size(), 1u);
  const double expected = amplitude * length_s / std::numbers::pi;
  EXPECT_NEAR(r.repetitions[0].max_abs_velocity, expected, 0.01 * expected);
  EXPECT_EQ(r.trace.size(), x.size());
}

TEST(ChairRising, GeneratedSitToStandPeakWithinFivePercent) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ms::Rng profile_rng(seed);
    const auto profile = ms::random_profile("S", profile_rng);
    const auto rec = ms::generate_recording(profile, ms::parse_plan("knees=2,chair=3"), seed);
    const auto r = ms::analyze_chair_rising(rec.channel(ms::channel::ax), rec.segments);
    ASSERT_EQ(r.bouts.size(), 1u);
    std::size_t k = 0;
    while (rec.segments[k].class_id != ms::id(ms::Activity::sit_to_stand)) ++k;
    const double expected = ms::sit_to_stand_peak_velocity(rec.segments[k], rec.gains[k]);
    ASSERT_EQ(r.repetitions[0].start, rec.segments[k].start);
    EXPECT_NEAR(r.repetitions[0].max_abs_velocity, expected, 0.05 * expected) << "seed " << seed;
  }
}

TEST(ChairRising, BoutsSplitByOtherActivitiesAndAnchoredAfterThem) {
  const auto profile = ms::SubjectProfile{};
  const auto rec = ms::generate_recording(profile, ms::parse_plan("chair=1,heels=2,chair=1"), 5);
  const auto r = ms::analyze_chair_rising(rec.channel(ms::channel::ax), rec.segments);
  ASSERT_EQ(r.bouts.size(), 2u);
  std::size_t last_heel_end = 0;
  for (const auto& s : rec.segments)
    if (s.class_id == ms::id(ms::Activity::heels_up_down)) last_heel_end = s.end;
  EXPECT_GE(r.bouts[1].still_window.begin, last_heel_end);
  EXPECT_EQ(r.repetitions.size(), 4u);
}

TEST(ChairRising, ManualStillWindowOverridesSearch) {
  const std::vector<double> x(600, 9.5);
  ms::VelocityOptions options;
  options.manual_still = ms::SampleRange{10, 90};
  const auto r = ms::analyze_chair_rising(x, {{300, 400, 4}}, options);
  EXPECT_EQ(r.bouts[0].still_window.begin, 10u);
  EXPECT_EQ(r.bouts[0].initial_index, 89u);
}

TEST(ChairRising, MissingStillWindowExplainsOverride) {
  const auto x = sine(1.5, 600, 4.0);
  try {
    ms::analyze_chair_rising(x, {{300, 400, 4}});
    FAIL() << "expected StillWindowError";
  } catch (const ms::StillWindowError& e) {
    EXPECT_NE(std::string(e.what()).find("manual"), std::string::npos);
  }
}
