#include <cmath>

#include "clisa/normalize.hpp"
#include "clisa/rng.hpp"
#include "clisa/sampler.hpp"
#include "clisa/signal.hpp"
#include "doctest.h"

using namespace clisa;

namespace {

constexpr double kPi = 3.14159265358979323846;

// single-bin DFT amplitude oracle, independent of the filter implementation
double tone_amplitude(const std::vector<double>& x, double freq_hz, double fs) {
  double re = 0, im = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double w = 2.0 * kPi * freq_hz * static_cast<double>(t) / fs;
    re += x[t] * std::cos(w);
    im += x[t] * std::sin(w);
  }
  return 2.0 * std::hypot(re, im) / static_cast<double>(x.size());
}

Tensor<double> sine_channel(double freq_hz, double fs, double seconds) {
  const auto n = static_cast<std::size_t>(fs * seconds);
  Tensor<double> out({1, n});
  for (std::size_t t = 0; t < n; ++t)
    out[t] = std::sin(2.0 * kPi * freq_hz * static_cast<double>(t) / fs);
  return out;
}

}  // namespace

TEST_CASE("bandpass keeps in-band tones within 1 dB") {
  const auto x = sine_channel(10.0, 250.0, 8.0);
  const auto y = signal::bandpass(x, 4.0, 47.0, 250.0);
  const double amp = tone_amplitude(y.data, 10.0, 250.0);
  CHECK(amp > 0.89);
  CHECK(amp < 1.12);
}

TEST_CASE("bandpass rejects out-of-band tones by 20 dB") {
  const auto x = sine_channel(1.0, 250.0, 8.0);
  const auto y = signal::bandpass(x, 4.0, 47.0, 250.0);
  CHECK(tone_amplitude(y.data, 1.0, 250.0) <= 0.1);

  const auto hi = sine_channel(94.0, 250.0, 8.0);
  const auto yh = signal::bandpass(hi, 4.0, 47.0, 250.0);
  CHECK(tone_amplitude(yh.data, 94.0, 250.0) <= 0.1);
}

TEST_CASE("bandpass is zero-phase on in-band tones") {
  const auto x = sine_channel(10.0, 250.0, 8.0);
  const auto y = signal::bandpass(x, 4.0, 47.0, 250.0);
  // cross-correlation against the input must peak at zero lag
  double best = -1e300;
  int best_lag = -99;
  for (int lag = -5; lag <= 5; ++lag) {
    double acc = 0;
    for (std::size_t t = 100; t + 100 < x.size(); ++t)
      acc += x[t] * y[static_cast<std::size_t>(static_cast<int>(t) + lag)];
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  CHECK(best_lag == 0);
}

TEST_CASE("bandpass of zero signal is zero") {
  Tensor<double> x({2, 500});
  const auto y = signal::bandpass(x, 4.0, 47.0, 250.0);
  for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("bandpass is linear") {
  Rng rng(1);
  Tensor<double> x({1, 600}), y({1, 600});
  for (auto& v : x.data) v = rng.gaussian();
  for (auto& v : y.data) v = rng.gaussian();
  const double a = 1.7, b = -0.4;
  Tensor<double> mix({1, 600});
  for (std::size_t i = 0; i < 600; ++i) mix[i] = a * x[i] + b * y[i];
  const auto fx = signal::bandpass(x, 4.0, 47.0, 250.0);
  const auto fy = signal::bandpass(y, 4.0, 47.0, 250.0);
  const auto fmix = signal::bandpass(mix, 4.0, 47.0, 250.0);
  for (std::size_t i = 0; i < 600; ++i)
    CHECK(fmix[i] == doctest::Approx(a * fx[i] + b * fy[i]).epsilon(1e-9));
}

TEST_CASE("bandpass rejects invalid bands") {
  Tensor<double> x({1, 100});
  CHECK_THROWS_AS(signal::bandpass(x, 47.0, 4.0, 250.0), signal::param_error);
  CHECK_THROWS_AS(signal::bandpass(x, 4.0, 130.0, 250.0), signal::param_error);
  CHECK_THROWS_AS(signal::bandpass(x, 0.0, 47.0, 250.0), signal::param_error);
}

TEST_CASE("rereference average") {
  Tensor<double> x({2, 3}, {1, 1, 1, 3, 3, 3});
  const auto y = signal::rereference(x, signal::RerefMode::average);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(y.at2(0, t) == doctest::Approx(-1));
    CHECK(y.at2(1, t) == doctest::Approx(1));
  }
}

TEST_CASE("rereference average zeroes channel mean at every time point") {
  Rng rng(2);
  Tensor<double> x({4, 100});
  for (auto& v : x.data) v = rng.gaussian() * 5.0;
  const auto y = signal::rereference(x, signal::RerefMode::average);
  for (std::size_t t = 0; t < 100; ++t) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += y.at2(c, t);
    CHECK(std::abs(s) < 1e-9);
  }
}

TEST_CASE("rereference mastoids zeroes identical mastoid channel") {
  Tensor<double> x({3, 4}, {2, 2, 2, 2, 2, 2, 2, 2, 1, 0, -1, 0});
  const auto y = signal::rereference(x, signal::RerefMode::mastoids, 0, 1);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(y.at2(0, t) == doctest::Approx(0));
    CHECK(y.at2(1, t) == doctest::Approx(0));
  }
  CHECK_THROWS_AS(signal::rereference(x, signal::RerefMode::mastoids, 0, 7),
                  signal::param_error);
  CHECK_THROWS_AS(signal::channel_index({"a", "b"}, "nope"), signal::param_error);
}

TEST_CASE("repair_outliers clamps amplitude jumps sequentially") {
  Tensor<double> x({1, 4}, {0, 50, 200, 60});
  auto [y, report] = signal::repair_outliers(x, {}, 100.0);
  CHECK(y[0] == 0);
  CHECK(y[1] == 50);
  CHECK(y[2] == 50);  // |200| - |50| = 150 > 100
  CHECK(y[3] == 60);  // |60| - |50| = 10 after repair
  CHECK(report.total_jumps == 1);
}

TEST_CASE("repair_outliers leaves clean channels unchanged") {
  Rng rng(3);
  Tensor<double> x({2, 200});
  for (auto& v : x.data) v = rng.gaussian();
  auto [y, report] = signal::repair_outliers(x, {}, 100.0);
  CHECK(report.total_jumps == 0);
  CHECK(report.interpolated_channels.empty());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("repair_outliers interpolates a saturated channel") {
  Rng rng(4);
  const std::size_t t = 300;
  Tensor<double> x({4, t});
  for (auto& v : x.data) v = rng.gaussian();
  // channel 0: 40% of points spike far beyond 3x its median magnitude
  for (std::size_t u = 0; u < t; ++u)
    if (u % 5 < 2) x.at2(0, u) = (u % 2 ? 1.0 : -1.0) * (30.0 + rng.uniform());
  std::vector<signal::ChannelPos> pos = {
      {"c0", 0, 0, 0}, {"c1", 1, 0, 0}, {"c2", 0, 1, 0}, {"c3", 1, 1, 0}};
  auto [y, report] = signal::repair_outliers(x, pos, 100.0);
  REQUIRE(report.interpolated_channels.size() == 1);
  CHECK(report.interpolated_channels[0] == 0);
  for (std::size_t u = 0; u < t; ++u) {
    const double mean3 = (x.at2(1, u) + x.at2(2, u) + x.at2(3, u)) / 3.0;
    CHECK(y.at2(0, u) == doctest::Approx(mean3).epsilon(1e-12));
  }
}

TEST_CASE("repair_outliers requires positions and enough clean channels") {
  const std::size_t t = 100;
  Tensor<double> x({2, t});
  for (std::size_t u = 0; u < t; ++u) {
    x.at2(0, u) = (u % 5 < 2) ? 50.0 : 0.1;
    x.at2(1, u) = 0.1;
  }
  CHECK_THROWS_AS(signal::repair_outliers(x, {}, 100.0), signal::param_error);
}

TEST_CASE("repair_outliers is idempotent") {
  Rng rng(5);
  const std::size_t t = 250;
  Tensor<double> x({4, t});
  for (auto& v : x.data) v = 10.0 * rng.gaussian();
  x.at2(1, 50) = 500.0;  // isolated jump
  for (std::size_t u = 0; u < t; ++u)
    if (u % 5 < 2) x.at2(2, u) = (u % 2 ? 1.0 : -1.0) * (300.0 + rng.uniform());  // noisy channel
  std::vector<signal::ChannelPos> pos = {
      {"c0", 0, 0, 0}, {"c1", 1, 0, 0}, {"c2", 0, 1, 0}, {"c3", 1, 1, 0}};
  auto [once, r1] = signal::repair_outliers(x, pos, 100.0);
  auto [twice, r2] = signal::repair_outliers(once, pos, 100.0);
  CHECK(r2.total_jumps == 0);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == once[i]);
}

TEST_CASE("stratified normalization matches hand z-scores") {
  Minibatch<double> mb;
  mb.samples_a = {Tensor<double>({1, 2}, {1, 2}), Tensor<double>({1, 2}, {3, 4})};
  mb.samples_b = {Tensor<double>({1, 2}, {5, 5}), Tensor<double>({1, 2}, {5, 5})};
  stratified_normalize(mb);
  CHECK(mb.samples_a[0][0] == doctest::Approx(-1.342).epsilon(1e-3));
  CHECK(mb.samples_a[0][1] == doctest::Approx(-0.447).epsilon(1e-3));
  CHECK(mb.samples_a[1][0] == doctest::Approx(0.447).epsilon(1e-3));
  CHECK(mb.samples_a[1][1] == doctest::Approx(1.342).epsilon(1e-3));
  // constant channel maps to zeros
  for (const auto& s : mb.samples_b)
    for (double v : s.data) CHECK(v == 0.0);
}

TEST_CASE("stratified normalization: per-group moments and idempotence") {
  Rng rng(6);
  Minibatch<double> mb;
  for (int i = 0; i < 3; ++i) {
    Tensor<double> a({2, 50}), b({2, 50});
    for (auto& v : a.data) v = 2.0 + 3.0 * rng.gaussian();
    for (auto& v : b.data) v = -1.0 + 0.5 * rng.gaussian();
    mb.samples_a.push_back(a);
    mb.samples_b.push_back(b);
  }
  stratified_normalize(mb);
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0, sq = 0;
    for (const auto& s : mb.samples_a)
      for (std::size_t u = 0; u < 50; ++u) {
        sum += s.at2(c, u);
        sq += s.at2(c, u) * s.at2(c, u);
      }
    const double n = 150.0;
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
  auto copy = mb;
  stratified_normalize(copy);
  for (std::size_t i = 0; i < copy.samples_a.size(); ++i)
    for (std::size_t j = 0; j < copy.samples_a[i].size(); ++j)
      CHECK(copy.samples_a[i][j] ==
            doctest::Approx(mb.samples_a[i][j]).epsilon(1e-6));
}

TEST_CASE("adaptive normalization: first sample is the training z-score") {
  AdaptiveNormState state({1.0, -2.0}, {4.0, 0.25}, 0.99);
  const std::vector<double> x = {3.0, -1.0};
  const auto out = adaptive_normalize(state, std::span<const double>(x.data(), 2));
  CHECK(out[0] == doctest::Approx((3.0 - 1.0) / std::sqrt(4.0 + 1e-8)));
  CHECK(out[1] == doctest::Approx((-1.0 + 2.0) / std::sqrt(0.25 + 1e-8)));
  CHECK(state.samples_seen == 1);
}

TEST_CASE("adaptive normalization converges to a constant stream") {
  AdaptiveNormState state({0.0}, {1.0}, 0.99);
  const std::vector<double> x = {5.0};
  for (int i = 0; i < 1000; ++i)
    adaptive_normalize(state, std::span<const double>(x.data(), 1));
  CHECK(std::abs(state.mean[0] - 5.0) < 1e-3);  // 0.99^1000 ~ 4.3e-5
}

TEST_CASE("adaptive normalization with decay 1 never changes state") {
  AdaptiveNormState state({1.0}, {2.0}, 1.0);
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x = {rng.gaussian() * 10.0};
    const auto out = adaptive_normalize(state, std::span<const double>(x.data(), 1));
    CHECK(out[0] == doctest::Approx((x[0] - 1.0) / std::sqrt(2.0 + 1e-8)));
  }
  CHECK(state.mean[0] == 1.0);
  CHECK(state.var[0] == 2.0);
  CHECK_THROWS_AS(AdaptiveNormState({0.0}, {1.0}, 0.0), std::invalid_argument);
  AdaptiveNormState bad({0.0}, {1.0}, 0.9);
  const std::vector<double> wrong = {1.0, 2.0};
  CHECK_THROWS_AS(adaptive_normalize(bad, std::span<const double>(wrong.data(), 2)),
                  dim_error);
}

TEST_CASE("segment window counts") {
  // 30 s at 250 Hz, 5 s windows, 2.5 s step -> 11 windows
  CHECK(signal::segment_offsets(7500, 1250, 625).size() == 11);
  CHECK(signal::segment_offsets(7500, 1250, 625).back() == 6250);
  CHECK(signal::segment_offsets(1250, 1250, 625).size() == 1);
  Tensor<double> x({2, 100});
  CHECK(signal::segment(x, 40, 20).size() == 4);
  CHECK_THROWS_AS(signal::segment(x, 101, 20), signal::param_error);
}
