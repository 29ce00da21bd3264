#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "elip/dataset.hpp"

namespace elip::signal {

struct Onset {
  std::size_t sample = 0;
  int label = 0;
  std::uint32_t stimulus_ref = 0;
};

// Continuous multi-channel recording, channel-major (C x T), microvolts.
struct RawBlock {
  double fs = 1000.0;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> samples;
  std::vector<std::string> channel_names;
  std::vector<Onset> onsets;
  std::uint32_t subject_id = 0;
  std::uint32_t task_id = 0;
  std::string task;

  double& at(std::size_t c, std::size_t t) { return samples[c * length + t]; }
  double at(std::size_t c, std::size_t t) const { return samples[c * length + t]; }
  std::span<const double> channel(std::size_t c) const { return {samples.data() + c * length, length}; }

  // Throws DataError on size mismatch or non-increasing onsets.
  void validate() const;
};

struct FilterSpec {
  int order = 3;
  double low_hz = 0.1;
  double high_hz = 15.0;
  double fs = 1000.0;

  void validate() const;
};

// One second-order section, a0 normalised to 1. Direct form II transposed.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

using Sos = std::vector<Biquad>;

// Digital Butterworth band-pass: analog prototype, low-pass to band-pass
// transform, bilinear transform with pre-warped band edges.
Sos design_bandpass(const FilterSpec& spec);

std::complex<double> frequency_response(const Sos& sos, double freq_hz, double fs);
std::vector<std::complex<double>> poles(const Sos& sos);
// Samples for the slowest pole to decay by 1/e.
std::size_t settle_length(const Sos& sos);

std::vector<double> sosfilt(const Sos& sos, std::span<const double> x);
// Forward-backward filtering with odd-reflection padding of 3*(2*order)
// samples and steady-state initial conditions scaled by the edge value.
std::vector<double> filtfilt(const Sos& sos, std::span<const double> x, int order);

// Zero-phase band-pass of every channel. Requires length >= 3 * settle_length.
RawBlock filter_zero_phase(const RawBlock& block, const FilterSpec& spec);

// Keeps every factor-th sample; onsets are floor-divided.
RawBlock decimate(const RawBlock& block, int factor);

struct EpochingResult {
  std::vector<EegEpoch> epochs;
  std::size_t dropped = 0;
};

// One epoch of length_ms per onset, starting at the onset.
EpochingResult epoch(const RawBlock& block, double length_ms = 1000.0);

// Per-channel zero mean, unit population variance over a C x T buffer. Flat
// channels become zeros and a warning is logged. Returns the flat-channel count.
std::size_t znorm_channels(std::span<double> data, std::size_t channels, std::size_t samples);
std::size_t znorm_channels(EegEpoch& epoch);

enum class PreprocOrder { Safe, Paper };

struct PreprocConfig {
  // Safe: band-pass at the recording rate, then decimate. Paper: decimate
  // first, then band-pass at the reduced rate.
  PreprocOrder order = PreprocOrder::Safe;
  FilterSpec filter{};
  int decimation = 4;
  double epoch_ms = 1000.0;
  bool znorm = true;
};

PreprocOrder parse_order(const std::string& text);

EpochingResult preprocess(const RawBlock& block, const PreprocConfig& config);

// "ELIPR1" raw container.
void save_raw(const std::filesystem::path& path, const RawBlock& block);
RawBlock load_raw(const std::filesystem::path& path);

}  // namespace elip::signal
