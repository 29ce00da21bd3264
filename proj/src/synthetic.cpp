#include "elip/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "elip/error.hpp"

namespace elip {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Paul Kellet's refined pink-noise filter: six leaky integrators plus a
// white term, roughly 1/f above a few Hz.
class PinkNoise {
 public:
  explicit PinkNoise(std::mt19937_64& rng) : rng_(rng) {
    // Start each integrator from its stationary distribution instead of a burn-in.
    for (int k = 0; k < 6; ++k) {
      const double sd = std::abs(kGain[k]) / std::sqrt(1.0 - kPole[k] * kPole[k]);
      state_[k] = sd * normal_(rng_);
    }
  }

  double next() {
    const double w = normal_(rng_);
    double out = 0.5362 * w + last_white_;
    for (int k = 0; k < 6; ++k) {
      state_[k] = kPole[k] * state_[k] + kGain[k] * w;
      out += state_[k];
    }
    last_white_ = 0.115926 * w;
    return out * kScale;
  }

 private:
  static constexpr double kPole[6] = {0.99886, 0.99332, 0.96900, 0.86650, 0.55000, -0.7616};
  static constexpr double kGain[6] = {0.0555179, 0.0750759, 0.1538520, 0.3104856, 0.5329522, -0.0168980};
  // Normalises the stationary output to unit standard deviation: the sum of
  // squared impulse-response taps, in closed form.
  static double stationary_scale() {
    double h0 = 0.5362, h1 = 0.115926;
    for (int k = 0; k < 6; ++k) {
      h0 += kGain[k];
      h1 += kGain[k] * kPole[k];
    }
    double var = h0 * h0 + h1 * h1;
    for (int k = 0; k < 6; ++k) {
      for (int l = 0; l < 6; ++l) {
        const double pp = kPole[k] * kPole[l];
        var += kGain[k] * kGain[l] * pp * pp / (1.0 - pp);
      }
    }
    return 1.0 / std::sqrt(var);
  }
  static inline const double kScale = stationary_scale();

  std::mt19937_64& rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  double state_[6] = {};
  double last_white_ = 0.0;
};

double gauss(double t, double mu, double width) {
  const double z = (t - mu) / width;
  return std::exp(-0.5 * z * z);
}

std::vector<double> unit_normal(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = nd(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  for (auto& x : v) x /= s;
  return v;
}

std::vector<double> normal_vec(std::mt19937_64& rng, std::size_t n, double sd) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

Tensor normal_tensor(std::mt19937_64& rng, Shape shape, double sd) {
  return Tensor(shape, normal_vec(rng, shape_numel(shape), sd));
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::vector<double> text_embedding(const std::string& prompt, std::uint64_t backbone_seed, std::size_t d) {
  std::mt19937_64 rng(mix(stable_hash(prompt), backbone_seed));
  return unit_normal(rng, d);
}

struct Templates {
  double n200_lat, p300_lat, n200_amp, p300_amp;
};

// Adds the target response for one trial into a C x T buffer sampled at fs.
void add_erp(const SyntheticConfig& cfg, const Templates& tp, double fs, std::size_t length,
             std::size_t offset, std::size_t stride, std::vector<double>& buf, double unit) {
  const std::size_t C = cfg.channels;
  for (std::size_t c = 0; c < C; ++c) {
    const double u = C > 1 ? static_cast<double>(c) / static_cast<double>(C - 1) : 0.5;
    const double wn = gauss(u, 0.85, 0.12);
    const double wp = gauss(u, 0.65, 0.18);
    for (std::size_t k = 0; k < length; ++k) {
      const double t_ms = static_cast<double>(k) * 1000.0 / fs;
      const double v = -tp.n200_amp * wn * gauss(t_ms, tp.n200_lat, cfg.n200_width_ms) +
                       tp.p300_amp * wp * gauss(t_ms, tp.p300_lat, cfg.p300_width_ms);
      buf[c * stride + offset + k] += unit * v;
    }
  }
}

struct SubjectProfile {
  double latency_ms;
  double amplitude;
};

SubjectProfile subject_profile(const SyntheticConfig& cfg, std::uint32_t subject) {
  std::mt19937_64 rng(mix(cfg.seed, 0x5b1ec7ull + subject));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {u(rng) * cfg.subject_latency_jitter_ms, 1.0 + u(rng) * cfg.subject_amplitude_jitter};
}

Templates trial_templates(const SyntheticConfig& cfg, const SubjectProfile& sp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double lat = cfg.latency_shift_ms + sp.latency_ms + u(rng) * cfg.trial_latency_jitter_ms;
  const double amp = cfg.amplitude_scale * sp.amplitude * (1.0 + u(rng) * cfg.trial_amplitude_jitter);
  return {cfg.n200_latency_ms + lat, cfg.p300_latency_ms + lat, cfg.n200_amp * amp, cfg.p300_amp * amp};
}

// Label sequence: each run of seq_len images holds exactly round(seq_len * rate) targets.
std::vector<int> label_sequence(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  const std::size_t per_seq = static_cast<std::size_t>(std::lround(static_cast<double>(cfg.seq_len) * cfg.target_rate));
  std::vector<int> labels;
  labels.reserve(cfg.n_blk * cfg.n_seq * cfg.seq_len);
  for (std::size_t s = 0; s < cfg.n_blk * cfg.n_seq; ++s) {
    std::vector<int> seq(cfg.seq_len, kNontarget);
    std::fill_n(seq.begin(), std::min(per_seq, cfg.seq_len), kTarget);
    std::shuffle(seq.begin(), seq.end(), rng);
    labels.insert(labels.end(), seq.begin(), seq.end());
  }
  return labels;
}

std::vector<std::string> channel_names(std::size_t C) {
  std::vector<std::string> names(C);
  for (std::size_t c = 0; c < C; ++c) names[c] = "E" + std::to_string(c + 1);
  return names;
}

}  // namespace

std::uint64_t stable_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint32_t SyntheticConfig::subject_id(std::size_t index) const {
  const std::uint32_t first = first_subject ? first_subject : task_id * 100 + 1;
  return first + static_cast<std::uint32_t>(index);
}

void SyntheticConfig::validate() const {
  if (!(target_rate > 0.0 && target_rate < 0.5)) throw ConfigError("synthetic target_rate must lie in (0, 0.5)");
  if (n200_amp < 0 || p300_amp < 0 || noise_level < 0) throw ConfigError("synthetic amplitudes must be >= 0");
  if (subjects == 0 || channels == 0 || samples == 0 || seq_len == 0) throw ConfigError("synthetic sizes must be positive");
  if (target_images == 0 || nontarget_images == 0) throw ConfigError("synthetic image pools must be non-empty");
  if (heads == 0 || d_clip % heads != 0) throw ConfigError("synthetic heads must divide d_clip");
  if (margin < 0 || margin >= 2) throw ConfigError("synthetic margin must lie in [0, 2)");
  if (target_prompt.empty() || nontarget_prompt.empty()) throw ConfigError("synthetic prompts must be non-empty");
}

SyntheticConfig SyntheticConfig::task_preset(std::uint32_t k) {
  static const char* kNames[] = {"synthA", "synthB", "synthC"};
  static const char* kPrompts[] = {"plane", "car", "people"};
  static const double kShift[] = {0.0, 40.0, -40.0};
  static const double kScale[] = {1.0, 0.7, 1.3};
  SyntheticConfig c;
  c.task = kNames[k % 3];
  c.task_id = k;
  c.target_prompt = kPrompts[k % 3];
  c.latency_shift_ms = kShift[k % 3];
  c.amplitude_scale = kScale[k % 3];
  c.seed = 1000 + k;
  return c;
}

EmbeddingBundle synth_bundle(const SyntheticConfig& cfg, std::vector<int>* labels_out) {
  cfg.validate();
  EmbeddingBundle b;
  b.d_clip = cfg.d_clip;
  b.d_enc = cfg.d_enc;
  b.n_patch = cfg.n_patch;
  b.heads = cfg.heads;
  b.mlp_hidden = cfg.mlp_hidden;
  b.target_prompt = cfg.target_prompt;
  b.nontarget_prompt = cfg.nontarget_prompt;
  b.se_mapping = "synthetic-random";

  const std::size_t d = cfg.d_clip;
  std::mt19937_64 bb(cfg.backbone_seed);
  b.class_token = normal_vec(bb, d, 1.0);
  b.pos_table = normal_vec(bb, (cfg.n_patch + 1) * d, 0.1);
  b.se_target = normal_vec(bb, d, 1.0);
  b.se_nontarget = normal_vec(bb, d, 1.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    FrozenLayer L = make_frozen_layer(d, cfg.mlp_hidden);
    const double sd = 0.5 / std::sqrt(static_cast<double>(d));
    L.wq = normal_tensor(bb, {d, d}, sd);
    L.wk = normal_tensor(bb, {d, d}, sd);
    L.wv = normal_tensor(bb, {d, d}, sd);
    L.wo = normal_tensor(bb, {d, d}, sd);
    L.fc1 = normal_tensor(bb, {d, cfg.mlp_hidden}, sd);
    L.fc2 = normal_tensor(bb, {cfg.mlp_hidden, d}, 0.5 / std::sqrt(static_cast<double>(cfg.mlp_hidden)));
    b.layers.push_back(std::move(L));
  }
  b.text_target = text_embedding(cfg.target_prompt, cfg.backbone_seed, cfg.d_enc);
  b.text_nontarget = text_embedding(cfg.nontarget_prompt, cfg.backbone_seed, cfg.d_enc);

  std::mt19937_64 obj_rng(mix(stable_hash(cfg.target_prompt), cfg.backbone_seed + 1));
  const std::vector<double> object = unit_normal(obj_rng, d);

  const std::size_t n = cfg.target_images + cfg.nontarget_images;
  std::vector<int> labels(n, kNontarget);
  std::fill_n(labels.begin(), cfg.target_images, kTarget);
  std::mt19937_64 rng(mix(cfg.seed, 0xb0d1eull));
  std::shuffle(labels.begin(), labels.end(), rng);

  b.image_count = n;
  b.patch_tokens.resize(n * cfg.n_patch * d);
  b.image_encodings.resize(n * cfg.d_enc);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.n_patch - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const bool target = labels[i] == kTarget;
    const auto& own = target ? b.text_target : b.text_nontarget;
    const auto& other = target ? b.text_nontarget : b.text_target;
    double sigma = cfg.encoding_noise;
    std::vector<double> enc;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 0 && attempt % 20 == 0) sigma *= 0.5;
      enc = own;
      for (auto& x : enc) x += sigma * nd(rng) / std::sqrt(static_cast<double>(cfg.d_enc));
      if (cosine(enc, own) - cosine(enc, other) >= cfg.margin) break;
    }
    for (std::size_t k = 0; k < cfg.d_enc; ++k) b.image_encodings[i * cfg.d_enc + k] = static_cast<float>(enc[k]);

    float* p = b.patch_tokens.data() + i * cfg.n_patch * d;
    for (std::size_t k = 0; k < cfg.n_patch * d; ++k) p[k] = static_cast<float>(nd(rng));
    if (target) {
      const double cue = cfg.object_cue * std::sqrt(static_cast<double>(d));
      for (int r = 0; r < 2; ++r) {
        const std::size_t row = pick(rng);
        for (std::size_t k = 0; k < d; ++k) p[row * d + k] += static_cast<float>(cue * object[k]);
      }
    }
  }
  if (labels_out) *labels_out = labels;
  return b;
}

SyntheticData synth_generate(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticData out;
  out.bundle = synth_bundle(cfg, &out.image_labels);

  std::vector<std::uint32_t> pool[2];
  for (std::size_t i = 0; i < out.image_labels.size(); ++i) {
    pool[out.image_labels[i]].push_back(static_cast<std::uint32_t>(i));
  }

  EpochDataset& ds = out.dataset;
  ds.channels = cfg.channels;
  ds.samples = cfg.samples;
  ds.meta.task = cfg.task;
  ds.meta.task_id = cfg.task_id;
  ds.meta.n_blk = cfg.n_blk;
  ds.meta.n_seq = cfg.n_seq;
  ds.meta.fs = cfg.fs;
  ds.meta.channel_names = channel_names(cfg.channels);

  const std::size_t C = cfg.channels, T = cfg.samples;
  std::vector<double> buf(C * T);
  for (std::size_t s = 0; s < cfg.subjects; ++s) {
    const std::uint32_t sid = cfg.subject_id(s);
    const SubjectProfile sp = subject_profile(cfg, sid);
    std::mt19937_64 rng(mix(cfg.seed, sid));
    const std::vector<int> labels = label_sequence(cfg, rng);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int label : labels) {
      PinkNoise common(rng);
      std::vector<double> shared(T);
      for (auto& v : shared) v = common.next();
      for (std::size_t c = 0; c < C; ++c) {
        PinkNoise pn(rng);
        for (std::size_t k = 0; k < T; ++k) buf[c * T + k] = cfg.noise_level * (pn.next() + 0.5 * shared[k]);
      }
      if (label == kTarget) add_erp(cfg, trial_templates(cfg, sp, rng), cfg.fs, T, 0, T, buf, 1.0);
      if (cfg.znorm) signal::znorm_channels(buf, C, T);

      EegEpoch e;
      e.channels = C;
      e.samples = T;
      e.data.assign(buf.begin(), buf.end());
      e.label = label;
      e.subject_id = sid;
      e.task_id = cfg.task_id;
      const auto& choices = pool[label];
      e.stimulus_ref = choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)];
      ds.epochs.push_back(std::move(e));
    }
  }
  return out;
}

signal::RawBlock synth_raw_block(const SyntheticConfig& cfg, std::size_t subject_index, double raw_fs,
                                 std::size_t onsets, double noise_uv, double line_uv) {
  cfg.validate();
  signal::RawBlock block;
  block.fs = raw_fs;
  block.channels = cfg.channels;
  block.subject_id = cfg.subject_id(subject_index);
  block.task_id = cfg.task_id;
  block.task = cfg.task;
  block.channel_names = channel_names(cfg.channels);

  const std::size_t spacing = static_cast<std::size_t>(std::lround(raw_fs * 0.1));
  const std::size_t lead = static_cast<std::size_t>(std::lround(raw_fs * 2.0));
  const std::size_t epoch_len = static_cast<std::size_t>(std::lround(raw_fs));
  block.length = lead + onsets * spacing + epoch_len + lead;
  block.samples.assign(cfg.channels * block.length, 0.0);

  std::mt19937_64 rng(mix(cfg.seed, 0x7a3ull + block.subject_id));
  SyntheticConfig rate_cfg = cfg;
  rate_cfg.n_blk = 1;
  rate_cfg.n_seq = (onsets + cfg.seq_len - 1) / cfg.seq_len;
  std::vector<int> labels = label_sequence(rate_cfg, rng);
  labels.resize(onsets);

  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    PinkNoise pn(rng);
    const double ph = phase(rng), drift_ph = phase(rng);
    for (std::size_t k = 0; k < block.length; ++k) {
      const double t = static_cast<double>(k) / raw_fs;
      block.at(c, k) = noise_uv * cfg.noise_level * pn.next() + line_uv * std::sin(2 * kPi * 50.0 * t + ph) +
                       20.0 * std::sin(2 * kPi * 0.03 * t + drift_ph);
    }
  }
  const SubjectProfile sp = subject_profile(cfg, block.subject_id);
  for (std::size_t i = 0; i < onsets; ++i) {
    const std::size_t at = lead + i * spacing;
    block.onsets.push_back({at, labels[i], 0});
    if (labels[i] == kTarget) {
      add_erp(cfg, trial_templates(cfg, sp, rng), raw_fs, epoch_len, at, block.length, block.samples, noise_uv);
    }
  }
  return block;
}

}  // namespace elip
