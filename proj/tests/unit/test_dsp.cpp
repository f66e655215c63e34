#include <cmath>
#include <numbers>

#include "doctest.h"
#include "physiofuse/dsp.hpp"

using namespace physiofuse;

namespace {

/// Magnitude of the analog prototype mapped through the pre-warped bilinear transform.
double butterworth_magnitude(const FilterSpec& spec, double fs, double f) {
  const auto warp = [fs](double hz) { return std::tan(std::numbers::pi * hz / fs); };
  double ratio;
  if (spec.kind == FilterKind::kLowpass) {
    ratio = warp(f) / warp(spec.high_hz);
  } else {
    const double wl = warp(spec.low_hz), wh = warp(spec.high_hz), w = warp(f);
    ratio = (w * w - wl * wh) / (w * (wh - wl));
  }
  return 1.0 / std::sqrt(1.0 + std::pow(ratio, 2.0 * spec.order));
}

SignalRecord tone(double hz, double fs, std::size_t n, std::size_t channels = 1) {
  SignalRecord r;
  r.channels = channels;
  r.sample_rate = fs;
  r.samples.resize(n * channels);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < n; ++i) r.samples[c * n + i] = std::sin(2 * std::numbers::pi * hz * i / fs);
  return r;
}

double rms(const double* x, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return std::sqrt(s / static_cast<double>(n));
}

const std::vector<FilterSpec> kDesigns = {
    {FilterKind::kLowpass, 0, 60, 8},    {FilterKind::kBandpass, 0.8, 50, 8}, {FilterKind::kBandpass, 4, 45, 8},
    {FilterKind::kLowpass, 0, 28.8, 8},  {FilterKind::kLowpass, 0, 10, 2},    {FilterKind::kBandpass, 1, 20, 4},
    {FilterKind::kLowpass, 0, 57.6, 8},  {FilterKind::kBandpass, 0.5, 100, 6},
};

}  // namespace

TEST_CASE("designs are stable and match the analog magnitude") {
  for (double fs : {128.0, 256.0, 512.0}) {
    for (const auto& spec : kDesigns) {
      if (spec.high_hz >= fs / 2) continue;
      const auto f = design_butterworth(spec, fs);
      CHECK(f.max_pole_magnitude() < 1.0);
      CHECK(f.sections.size() == static_cast<std::size_t>(spec.kind == FilterKind::kLowpass ? spec.order / 2 : spec.order));
      for (int i = 1; i < 50; ++i) {
        const double hz = fs / 2 * i / 50.0;
        CHECK(std::abs(f.response(hz)) == doctest::Approx(butterworth_magnitude(spec, fs, hz)).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("cutoffs sit at half power") {
  for (const auto& spec : kDesigns) {
    const double fs = 256.0;
    if (spec.high_hz >= fs / 2) continue;
    const auto f = design_butterworth(spec, fs);
    CHECK(std::abs(std::abs(f.response(spec.high_hz)) - M_SQRT1_2) < 1e-6);
    if (spec.kind == FilterKind::kBandpass) CHECK(std::abs(std::abs(f.response(spec.low_hz)) - M_SQRT1_2) < 1e-6);
  }
}

TEST_CASE("band-pass rejects a 100 Hz tone") {
  const auto f = design_butterworth(*filter_preset("amigos-eeg"), 256.0);
  const auto out = apply_filter(f, tone(100.0, 256.0, 4096));
  const double gain = rms(out.samples.data() + 2048, 2048) / rms(tone(100.0, 256.0, 4096).samples.data(), 4096);
  CHECK(20 * std::log10(gain) <= -40.0);
  CHECK(20 * std::log10(std::abs(f.response(100.0))) <= -40.0);
}

TEST_CASE("invalid designs are rejected") {
  CHECK_THROWS(design_butterworth({FilterKind::kLowpass, 0, 200, 8}, 256.0));
  CHECK_THROWS(design_butterworth({FilterKind::kBandpass, 30, 20, 8}, 256.0));
  CHECK_THROWS(design_butterworth({FilterKind::kLowpass, 0, 20, 3}, 256.0));
  CHECK_THROWS_AS(filter_preset("nope"), ConfigError);
  CHECK_FALSE(filter_preset("none").has_value());
}

TEST_CASE("decimation keeps in-band tones and changes the rate") {
  const auto in = tone(5.0, 512.0, 8192);
  const auto out = decimate(in, 128.0);
  CHECK(out.sample_rate == 128.0);
  CHECK(out.length() == 2048);
  CHECK(rms(out.samples.data() + 512, 1536) == doctest::Approx(M_SQRT1_2).epsilon(0.01));
  CHECK_THROWS(decimate(in, 100.0));
}

TEST_CASE("segmentation drops the remainder") {
  auto r = tone(3.0, 128.0, 128 * 25 + 17, 2);
  const auto segs = segment(r, 10.0, 128.0);
  REQUIRE(segs.size() == 2);
  CHECK(segs[1].window == 1);
  CHECK(segs[1].length == 1280);
  CHECK(segs[1].samples[0] == r.samples[1280]);
  CHECK(segs[1].samples[1280] == r.samples[r.length() + 1280]);
  CHECK_THROWS(segment(r, 10.0, 256.0));
}

TEST_CASE("per-subject normalization and degenerate channels") {
  auto a = tone(3.0, 128.0, 1000, 2);
  auto b = tone(7.0, 128.0, 500, 2);
  for (auto& x : a.samples) x = 3 * x + 2;
  a.subject_id = b.subject_id = "s1";
  const auto out = normalize_per_subject({a, b}, "s1");
  REQUIRE(out.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, sq = 0;
    std::size_t n = 0;
    for (const auto& r : out)
      for (std::size_t i = 0; i < r.length(); ++i, ++n) {
        s += r.channel(c)[i];
        sq += r.channel(c)[i] * r.channel(c)[i];
      }
    CHECK(s / n == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-10));
  }
  SignalRecord flat;
  flat.samples.assign(100, 1.0);
  CHECK_THROWS_AS(compute_channel_stats({&flat}), DegenerateSignalError);
}
