#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elip/bundle.hpp"
#include "elip/dataset.hpp"
#include "elip/signal.hpp"

namespace elip {

// Synthetic RSVP task: pink-noise EEG with N200/P300 templates on targets,
// plus a miniature embedding bundle for the task's image pool.
struct SyntheticConfig {
  std::string task = "synthA";
  std::uint32_t task_id = 0;
  std::string target_prompt = "plane";
  std::string nontarget_prompt = "nontarget background";

  std::size_t subjects = 4;
  // 0 selects task_id * 100 + 1, keeping subject ids disjoint across tasks.
  std::uint32_t first_subject = 0;
  std::size_t n_blk = 1;
  std::size_t n_seq = 14;
  std::size_t seq_len = 100;
  double target_rate = 0.04;

  std::size_t channels = 64;
  std::size_t samples = 250;
  double fs = 250.0;

  // Amplitudes are in units of the per-channel noise standard deviation.
  double n200_amp = 0.5;
  double p300_amp = 0.8;
  double n200_latency_ms = 250.0;
  double p300_latency_ms = 380.0;
  double n200_width_ms = 30.0;
  double p300_width_ms = 70.0;
  double noise_level = 1.0;

  // Task-level template perturbation.
  double latency_shift_ms = 0.0;
  double amplitude_scale = 1.0;
  double subject_latency_jitter_ms = 15.0;
  double subject_amplitude_jitter = 0.15;
  double trial_latency_jitter_ms = 20.0;
  double trial_amplitude_jitter = 0.2;
  bool znorm = true;

  // Bundle geometry.
  std::size_t d_clip = 64;
  std::size_t d_enc = 32;
  std::size_t n_patch = 9;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 128;
  std::size_t target_images = 32;
  std::size_t nontarget_images = 160;
  double margin = 0.3;
  double encoding_noise = 1.0;
  double object_cue = 1.0;

  std::uint64_t seed = 1;
  // Shared across tasks: class token, positional table, semantic embeddings,
  // frozen layers and the nontarget text embedding.
  std::uint64_t backbone_seed = 7;

  std::uint32_t subject_id(std::size_t index) const;
  void validate() const;

  // Task k of a cross-task family: latency shifts {0, +40, -40} ms and
  // amplitude scales {1.0, 0.7, 1.3}, cycling.
  static SyntheticConfig task_preset(std::uint32_t k);
};

struct SyntheticData {
  EpochDataset dataset;
  EmbeddingBundle bundle;
  std::vector<int> image_labels;
};

SyntheticData synth_generate(const SyntheticConfig& cfg);

// Bundle only; image labels are written into `labels` when non-null.
EmbeddingBundle synth_bundle(const SyntheticConfig& cfg, std::vector<int>* labels = nullptr);

// Continuous recording at `raw_fs` with one onset every 100 ms, in
// microvolts: pink noise, slow drift and 50 Hz line noise plus the templates.
signal::RawBlock synth_raw_block(const SyntheticConfig& cfg, std::size_t subject_index, double raw_fs,
                                 std::size_t onsets, double noise_uv = 10.0, double line_uv = 5.0);

// FNV-1a; stable across platforms, used to derive per-prompt embeddings.
std::uint64_t stable_hash(const std::string& text);

}  // namespace elip
