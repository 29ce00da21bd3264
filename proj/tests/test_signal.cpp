#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "elip/error.hpp"
#include "elip/log.hpp"
#include "elip/signal.hpp"
#include "elip/synthetic.hpp"
#include "test_util.hpp"

using namespace elip;
using namespace elip::signal;

namespace {

constexpr double kPi = std::numbers::pi;

RawBlock single_channel(std::vector<double> x, double fs) {
  RawBlock b;
  b.fs = fs;
  b.channels = 1;
  b.length = x.size();
  b.samples = std::move(x);
  return b;
}

std::vector<double> sine(double hz, double fs, std::size_t n, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) x[k] = amp * std::sin(2 * kPi * hz * static_cast<double>(k) / fs);
  return x;
}

double rms(std::span<const double> x, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t k = from; k < to; ++k) s += x[k] * x[k];
  return std::sqrt(s / static_cast<double>(to - from));
}

}  // namespace

TEST_CASE("band-pass design") {
  const FilterSpec spec;
  const Sos sos = design_bandpass(spec);
  CHECK(sos.size() == 3);
  CHECK(std::abs(frequency_response(sos, 0.0, spec.fs)) < 1e-6);
  const double center = std::abs(frequency_response(sos, std::sqrt(0.1 * 15.0), spec.fs));
  CHECK(center >= 0.99);
  CHECK(center <= 1.0 + 1e-12);
  CHECK(20 * std::log10(std::abs(frequency_response(sos, 50.0, spec.fs))) < -30.0);
  for (const auto& p : poles(sos)) CHECK(std::abs(p) < 1.0);
  CHECK(settle_length(sos) > 0);
}

TEST_CASE("band-pass rejects invalid bands") {
  CHECK_THROWS_AS(design_bandpass(FilterSpec{3, 15.0, 0.1, 1000.0}), ConfigError);
  CHECK_THROWS_AS(design_bandpass(FilterSpec{3, 0.1, 600.0, 1000.0}), ConfigError);
  CHECK_THROWS_AS(design_bandpass(FilterSpec{0, 0.1, 15.0, 1000.0}), ConfigError);
}

TEST_CASE("10 Hz sine: zero lag and the squared single-pass gain") {
  const FilterSpec spec;
  const Sos sos = design_bandpass(spec);
  const auto x = sine(10.0, 1000.0, 60000);
  const RawBlock out = filter_zero_phase(single_channel(x, 1000.0), spec);
  const auto y = out.channel(0);

  const double ratio = rms(y, 12000, 48000) / rms(x, 12000, 48000);
  const double h2 = std::norm(frequency_response(sos, 10.0, 1000.0));
  CHECK(ratio == doctest::Approx(h2).epsilon(1e-4));
  MESSAGE("10 Hz amplitude ratio " << ratio);

  int best = 0;
  double best_c = -1e300;
  for (int lag = -50; lag <= 50; ++lag) {
    double c = 0;
    for (std::size_t k = 12000; k < 48000; ++k) c += x[k] * y[static_cast<std::size_t>(static_cast<int>(k) + lag)];
    if (c > best_c) best_c = c, best = lag;
  }
  CHECK(best == 0);
}

TEST_CASE("DC offset is removed away from the edges") {
  const RawBlock out = filter_zero_phase(single_channel(std::vector<double>(20000, 100.0), 1000.0), FilterSpec{});
  double worst = 0;
  for (std::size_t k = 5000; k < 15000; ++k) worst = std::max(worst, std::abs(out.samples[k]));
  CHECK(worst < 0.1);
}

TEST_CASE("impulse response is symmetric") {
  std::vector<double> x(100001, 0.0);
  x[50000] = 1.0;
  const auto y = filtfilt(design_bandpass(FilterSpec{}), x, 3);
  double asym = 0;
  for (std::size_t k = 1; k < 20000; ++k) asym = std::max(asym, std::abs(y[50000 + k] - y[50000 - k]));
  CHECK(asym < 1e-8);
}

TEST_CASE("time reversal commutes with the zero-phase filter") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  // the slowest pole settles in about 3200 samples; stay 25 settle lengths from either edge
  std::vector<double> x(200000);
  for (auto& v : x) v = nd(rng);
  const Sos sos = design_bandpass(FilterSpec{});
  auto y = filtfilt(sos, x, 3);
  std::vector<double> xr(x.rbegin(), x.rend());
  auto yr = filtfilt(sos, xr, 3);
  double worst = 0;
  for (std::size_t k = 80000; k < 120000; ++k) worst = std::max(worst, std::abs(y[k] - yr[x.size() - 1 - k]));
  CHECK(worst < 1e-9);
}

TEST_CASE("filter is linear") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> nd;
  std::vector<double> x(20000), y(20000), z(20000);
  const double a = 1.7, b = -0.4;
  for (std::size_t k = 0; k < x.size(); ++k) {
    x[k] = nd(rng);
    y[k] = 3.0 + nd(rng);
    z[k] = a * x[k] + b * y[k];
  }
  const Sos sos = design_bandpass(FilterSpec{});
  auto fx = filtfilt(sos, x, 3), fy = filtfilt(sos, y, 3), fz = filtfilt(sos, z, 3);
  double worst = 0;
  for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(fz[k] - (a * fx[k] + b * fy[k])));
  CHECK(worst < 1e-9);
}

TEST_CASE("short blocks are rejected") {
  CHECK_THROWS_AS(filter_zero_phase(single_channel(std::vector<double>(500, 0.0), 1000.0), FilterSpec{}), DataError);
}

TEST_CASE("decimate") {
  RawBlock b = single_channel(sine(5.0, 1000.0, 1000), 1000.0);
  b.onsets = {{0, 0, 0}, {1000 - 4, 1, 1}};
  const RawBlock d = decimate(b, 4);
  CHECK(d.length == 250);
  CHECK(d.fs == 250.0);
  CHECK(d.onsets[1].sample == 249);
  CHECK(testutil::max_abs_diff(d.samples, sine(5.0, 250.0, 250)) < 1e-9);

  RawBlock long_block = single_channel(std::vector<double>(4000, 0.0), 1000.0);
  long_block.onsets = {{1000, 0, 0}};
  CHECK(decimate(long_block, 4).onsets[0].sample == 250);
  CHECK_THROWS_AS(decimate(single_channel(std::vector<double>(10, 0.0), 1001.0), 4), ConfigError);
}

TEST_CASE("epoching") {
  RawBlock b = single_channel(std::vector<double>(1000, 0.0), 250.0);
  for (std::size_t k = 0; k < 1000; ++k) b.samples[k] = static_cast<double>(k);
  b.onsets = {{0, 1, 7}};
  auto r = epoch(b);
  REQUIRE(r.epochs.size() == 1);
  CHECK(r.epochs[0].samples == 250);
  CHECK(r.epochs[0].data.front() == 0.0f);
  CHECK(r.epochs[0].data.back() == 249.0f);
  CHECK(r.epochs[0].label == 1);
  CHECK(r.epochs[0].stimulus_ref == 7);

  RawBlock c = single_channel(std::vector<double>(2000, 0.0), 250.0);
  for (std::size_t i = 0; i < 9; ++i) c.onsets.push_back({i * 100, 0, 0});
  c.onsets.push_back({1900, 0, 0});
  auto rc = epoch(c);
  CHECK(rc.epochs.size() == 9);
  CHECK(rc.dropped == 1);
}

TEST_CASE("znorm") {
  std::vector<double> ramp(100);
  for (std::size_t k = 0; k < ramp.size(); ++k) ramp[k] = static_cast<double>(k + 1);
  std::vector<double> buf = ramp;
  buf.insert(buf.end(), 100, 4.0);

  log::WarningCounter warnings;
  CHECK(znorm_channels(buf, 2, 100) == 1);
  CHECK(warnings.count() == 1);

  double mu = 0, var = 0;
  for (std::size_t k = 0; k < 100; ++k) mu += buf[k];
  mu /= 100;
  for (std::size_t k = 0; k < 100; ++k) var += (buf[k] - mu) * (buf[k] - mu);
  var /= 100;
  CHECK(std::abs(mu) < 1e-10);
  CHECK(std::abs(var - 1.0) < 1e-10);
  for (std::size_t k = 100; k < 200; ++k) CHECK(buf[k] == 0.0);

  std::vector<double> again = buf;
  znorm_channels(again, 2, 100);
  CHECK(testutil::max_abs_diff(again, buf) < 1e-10);
}

TEST_CASE("full chain keeps an injected P300 at sample 75") {
  // Gaussian component peaking 300 ms after a single onset, at 1000 Hz.
  const double fs = 1000.0;
  const std::size_t n = 12000, onset = 6000;
  std::vector<double> x(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double dt = (static_cast<double>(k) - static_cast<double>(onset + 300)) / fs;
    x[k] = 10.0 * std::exp(-0.5 * (dt / 0.07) * (dt / 0.07));
  }
  RawBlock b = single_channel(x, fs);
  b.onsets = {{onset, kTarget, 0}};
  auto r = preprocess(b, PreprocConfig{});
  REQUIRE(r.epochs.size() == 1);
  const auto& d = r.epochs[0].data;
  const auto peak = static_cast<long>(std::max_element(d.begin(), d.end()) - d.begin());
  CHECK(std::abs(peak - 75) <= 1);
}

TEST_CASE("full chain on a generated raw block") {
  SyntheticConfig cfg;
  cfg.channels = 4;
  cfg.n200_amp = 0.0;
  cfg.p300_latency_ms = 300.0;
  cfg.subject_latency_jitter_ms = cfg.trial_latency_jitter_ms = 0.0;
  cfg.subject_amplitude_jitter = cfg.trial_amplitude_jitter = 0.0;
  cfg.noise_level = 0.0;
  RawBlock raw = synth_raw_block(cfg, 0, 1000.0, 400, 10.0, 0.0);
  auto r = preprocess(raw, PreprocConfig{});
  // channel 2 of 4 sits near the centre of the parietal weighting
  std::vector<double> avg(250, 0.0);
  std::size_t targets = 0;
  for (const auto& e : r.epochs) {
    if (e.label != kTarget) continue;
    ++targets;
    for (std::size_t k = 0; k < 250; ++k) avg[k] += e.data[2 * 250 + k];
  }
  REQUIRE(targets > 0);
  const auto peak = static_cast<long>(std::max_element(avg.begin(), avg.end()) - avg.begin());
  CHECK(std::abs(peak - 75) <= 1);
}

TEST_CASE("paper order runs and differs from safe order") {
  RawBlock raw = synth_raw_block(SyntheticConfig{}, 0, 1000.0, 50);
  PreprocConfig safe, paper;
  paper.order = parse_order("paper");
  auto a = preprocess(raw, safe), b = preprocess(raw, paper);
  REQUIRE(a.epochs.size() == b.epochs.size());
  CHECK(a.epochs[0].data != b.epochs[0].data);
  CHECK_THROWS_AS(parse_order("fast"), ConfigError);
}

TEST_CASE("ELIPR1 round-trip") {
  testutil::TempDir dir("raw");
  SyntheticConfig cfg;
  cfg.channels = 3;
  RawBlock raw = synth_raw_block(cfg, 1, 1000.0, 20);
  save_raw(dir / "b.elipr", raw);
  RawBlock back = load_raw(dir / "b.elipr");
  CHECK(back.fs == raw.fs);
  CHECK(back.channels == raw.channels);
  CHECK(back.subject_id == raw.subject_id);
  CHECK(back.task == raw.task);
  CHECK(back.channel_names == raw.channel_names);
  REQUIRE(back.onsets.size() == raw.onsets.size());
  for (std::size_t i = 0; i < raw.onsets.size(); ++i) {
    CHECK(back.onsets[i].sample == raw.onsets[i].sample);
    CHECK(back.onsets[i].label == raw.onsets[i].label);
  }
  for (std::size_t k = 0; k < raw.samples.size(); ++k) {
    CHECK(back.samples[k] == static_cast<double>(static_cast<float>(raw.samples[k])));
  }
}
