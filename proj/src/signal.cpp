#include "elip/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "binio.hpp"
#include "elip/error.hpp"
#include "elip/log.hpp"

namespace elip::signal {

using cplx = std::complex<double>;

void RawBlock::validate() const {
  if (channels == 0 || length == 0) throw DataError("raw block has no samples");
  if (samples.size() != channels * length) {
    throw DataError("raw block holds " + std::to_string(samples.size()) + " samples, expected " +
                    std::to_string(channels * length));
  }
  if (!channel_names.empty() && channel_names.size() != channels) {
    throw DataError("raw block channel name count differs from channel count");
  }
  for (std::size_t i = 1; i < onsets.size(); ++i) {
    if (onsets[i].sample <= onsets[i - 1].sample) throw DataError("raw block onsets must be strictly increasing");
  }
}

void FilterSpec::validate() const {
  if (order < 1) throw ConfigError("filter order must be >= 1");
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0)) {
    std::ostringstream os;
    os << "band [" << low_hz << ", " << high_hz << "] Hz must satisfy 0 < lo < hi < fs/2 = " << fs / 2.0;
    throw ConfigError(os.str());
  }
}

Sos design_bandpass(const FilterSpec& spec) {
  spec.validate();
  const int n = spec.order;
  const double fs2 = 2.0 * spec.fs;
  const double w1 = fs2 * std::tan(std::numbers::pi * spec.low_hz / spec.fs);
  const double w2 = fs2 * std::tan(std::numbers::pi * spec.high_hz / spec.fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // Analog band-pass poles from the unit Butterworth prototype.
  std::vector<cplx> analog;
  for (int m = -n + 1; m <= n - 1; m += 2) {
    cplx p = -std::exp(cplx(0.0, std::numbers::pi * m / (2.0 * n)));
    cplx lp = p * bw / 2.0;
    cplx root = std::sqrt(lp * lp - w0sq);
    analog.push_back(lp + root);
    analog.push_back(lp - root);
  }
  // Gain: bw^n from the transform, then the bilinear map of n zeros at s=0
  // (to z=1) and n zeros at infinity (to z=-1).
  cplx gain = std::pow(bw, n) * std::pow(fs2, n);
  std::vector<cplx> digital;
  for (const cplx& p : analog) {
    gain /= (fs2 - p);
    digital.push_back((fs2 + p) / (fs2 - p));
  }

  // Pair conjugates; leftover real poles pair with each other.
  std::vector<cplx> complex_poles, real_poles;
  for (const cplx& p : digital) {
    if (std::abs(p.imag()) > 1e-12 * std::max(1.0, std::abs(p))) {
      if (p.imag() > 0) complex_poles.push_back(p);
    } else {
      real_poles.push_back(p.real());
    }
  }
  std::sort(real_poles.begin(), real_poles.end(),
            [](const cplx& a, const cplx& b) { return a.real() < b.real(); });
  Sos sos;
  for (const cplx& p : complex_poles) {
    sos.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    double p1 = real_poles[i].real(), p2 = real_poles[i + 1].real();
    sos.push_back({1.0, 0.0, -1.0, -(p1 + p2), p1 * p2});
  }
  if (sos.size() != static_cast<std::size_t>(n)) throw NumericError("band-pass design produced unexpected pole layout");
  const double k = gain.real();
  sos[0].b0 *= k;
  sos[0].b1 *= k;
  sos[0].b2 *= k;
  for (const cplx& p : poles(sos)) {
    if (std::abs(p) >= 1.0) throw NumericError("band-pass design produced an unstable pole");
  }
  return sos;
}

cplx frequency_response(const Sos& sos, double freq_hz, double fs) {
  const double w = 2.0 * std::numbers::pi * freq_hz / fs;
  const cplx z1 = std::exp(cplx(0.0, -w));
  const cplx z2 = z1 * z1;
  cplx h(1.0, 0.0);
  for (const Biquad& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

std::vector<cplx> poles(const Sos& sos) {
  std::vector<cplx> out;
  for (const Biquad& s : sos) {
    cplx disc = std::sqrt(cplx(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    out.push_back((-s.a1 + disc) / 2.0);
    out.push_back((-s.a1 - disc) / 2.0);
  }
  return out;
}

std::size_t settle_length(const Sos& sos) {
  double r = 0.0;
  for (const cplx& p : poles(sos)) r = std::max(r, std::abs(p));
  return static_cast<std::size_t>(std::ceil(1.0 / (1.0 - r)));
}

namespace {

struct State {
  double z1 = 0.0, z2 = 0.0;
};

// Steady-state section states for a unit step at the cascade input.
std::vector<State> step_state(const Sos& sos) {
  std::vector<State> zi(sos.size());
  double scale = 1.0;
  for (std::size_t i = 0; i < sos.size(); ++i) {
    const Biquad& s = sos[i];
    double y = scale * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    zi[i].z2 = scale * s.b2 - s.a2 * y;
    zi[i].z1 = scale * s.b1 - s.a1 * y + zi[i].z2;
    scale = y;
  }
  return zi;
}

void run(const Sos& sos, std::vector<State> state, std::vector<double>& x) {
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const Biquad& s = sos[k];
    State st = state[k];
    for (double& v : x) {
      double y = s.b0 * v + st.z1;
      st.z1 = s.b1 * v - s.a1 * y + st.z2;
      st.z2 = s.b2 * v - s.a2 * y;
      v = y;
    }
  }
}

std::vector<State> scaled(const std::vector<State>& zi, double factor) {
  std::vector<State> out = zi;
  for (State& s : out) {
    s.z1 *= factor;
    s.z2 *= factor;
  }
  return out;
}

}  // namespace

std::vector<double> sosfilt(const Sos& sos, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  run(sos, std::vector<State>(sos.size()), y);
  return y;
}

std::vector<double> filtfilt(const Sos& sos, std::span<const double> x, int order) {
  const std::size_t pad = static_cast<std::size_t>(3 * 2 * order);
  const std::size_t n = x.size();
  if (n <= pad) {
    throw DataError("signal of " + std::to_string(n) + " samples is too short for padding of " +
                    std::to_string(pad));
  }
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  const std::vector<State> zi = step_state(sos);
  run(sos, scaled(zi, ext.front()), ext);
  std::reverse(ext.begin(), ext.end());
  run(sos, scaled(zi, ext.front()), ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

RawBlock filter_zero_phase(const RawBlock& block, const FilterSpec& spec) {
  block.validate();
  FilterSpec s = spec;
  s.fs = block.fs;
  const Sos sos = design_bandpass(s);
  const std::size_t need = 3 * settle_length(sos);
  if (block.length < need) {
    throw DataError("block of " + std::to_string(block.length) + " samples is shorter than " +
                    std::to_string(need) + " (3x filter settle length)");
  }
  RawBlock out = block;
  for (std::size_t c = 0; c < block.channels; ++c) {
    std::vector<double> y = filtfilt(sos, block.channel(c), s.order);
    std::copy(y.begin(), y.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(c * block.length));
  }
  return out;
}

RawBlock decimate(const RawBlock& block, int factor) {
  block.validate();
  if (factor < 1) throw ConfigError("decimation factor must be >= 1");
  const double new_fs = block.fs / factor;
  if (std::abs(new_fs - std::round(new_fs)) > 1e-9) {
    throw ConfigError("sampling rate " + std::to_string(block.fs) + " is not divisible by " +
                      std::to_string(factor));
  }
  const std::size_t f = static_cast<std::size_t>(factor);
  RawBlock out = block;
  out.fs = new_fs;
  out.length = (block.length + f - 1) / f;
  out.samples.assign(block.channels * out.length, 0.0);
  for (std::size_t c = 0; c < block.channels; ++c) {
    for (std::size_t t = 0; t < out.length; ++t) out.at(c, t) = block.at(c, t * f);
  }
  for (Onset& o : out.onsets) o.sample /= f;
  return out;
}

EpochingResult epoch(const RawBlock& block, double length_ms) {
  block.validate();
  const auto n = static_cast<std::size_t>(std::llround(block.fs * length_ms / 1000.0));
  if (n == 0) throw ConfigError("epoch length rounds to zero samples");
  EpochingResult res;
  for (const Onset& o : block.onsets) {
    if (o.sample + n > block.length) {
      ++res.dropped;
      continue;
    }
    EegEpoch e;
    e.channels = block.channels;
    e.samples = n;
    e.data.resize(block.channels * n);
    for (std::size_t c = 0; c < block.channels; ++c) {
      for (std::size_t t = 0; t < n; ++t) e.data[c * n + t] = static_cast<float>(block.at(c, o.sample + t));
    }
    e.label = o.label;
    e.subject_id = block.subject_id;
    e.task_id = block.task_id;
    e.stimulus_ref = o.stimulus_ref;
    res.epochs.push_back(std::move(e));
  }
  return res;
}

std::size_t znorm_channels(std::span<double> data, std::size_t channels, std::size_t samples) {
  if (data.size() != channels * samples) throw ShapeError("znorm_channels: buffer size mismatch");
  std::size_t flat = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    double* row = data.data() + c * samples;
    double mu = 0.0;
    for (std::size_t t = 0; t < samples; ++t) mu += row[t];
    mu /= static_cast<double>(samples);
    double var = 0.0;
    for (std::size_t t = 0; t < samples; ++t) var += (row[t] - mu) * (row[t] - mu);
    var /= static_cast<double>(samples);
    if (var <= 1e-24 * std::max(1.0, mu * mu)) {
      std::fill(row, row + samples, 0.0);
      ++flat;
      continue;
    }
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t t = 0; t < samples; ++t) row[t] = (row[t] - mu) * inv;
  }
  if (flat > 0) log::warn("znorm: " + std::to_string(flat) + " flat channel(s) set to zero");
  return flat;
}

std::size_t znorm_channels(EegEpoch& e) {
  std::vector<double> buf(e.data.begin(), e.data.end());
  std::size_t flat = znorm_channels(buf, e.channels, e.samples);
  for (std::size_t i = 0; i < buf.size(); ++i) e.data[i] = static_cast<float>(buf[i]);
  return flat;
}

PreprocOrder parse_order(const std::string& text) {
  if (text == "safe") return PreprocOrder::Safe;
  if (text == "paper") return PreprocOrder::Paper;
  throw ConfigError("preproc.order must be 'safe' or 'paper', got '" + text + "'");
}

EpochingResult preprocess(const RawBlock& block, const PreprocConfig& config) {
  RawBlock filtered;
  if (config.order == PreprocOrder::Safe) {
    filtered = decimate(filter_zero_phase(block, config.filter), config.decimation);
  } else {
    log::info("preprocess: decimating before band-pass (paper order)");
    filtered = filter_zero_phase(decimate(block, config.decimation), config.filter);
  }
  EpochingResult res = epoch(filtered, config.epoch_ms);
  if (res.dropped > 0) {
    log::info("preprocess: dropped " + std::to_string(res.dropped) + " epoch(s) overrunning the block end");
  }
  if (config.znorm) {
    for (EegEpoch& e : res.epochs) znorm_channels(e);
  }
  return res;
}

void save_raw(const std::filesystem::path& path, const RawBlock& block) {
  block.validate();
  binio::Writer w(path);
  w.line("ELIPR1");
  std::ostringstream fs;
  fs.precision(17);
  fs << block.fs;
  w.line("fs=" + fs.str());
  w.line("channels=" + std::to_string(block.channels));
  w.line("samples=" + std::to_string(block.length));
  w.line("subject=" + std::to_string(block.subject_id));
  w.line("task_id=" + std::to_string(block.task_id));
  w.line("task=" + block.task);
  std::string names;
  for (std::size_t i = 0; i < block.channel_names.size(); ++i) names += (i ? "," : "") + block.channel_names[i];
  w.line("channel_names=" + names);
  w.line("onsets=" + std::to_string(block.onsets.size()));
  for (const Onset& o : block.onsets) {
    w.line("onset sample=" + std::to_string(o.sample) + " label=" + std::to_string(o.label) +
           " stimulus=" + std::to_string(o.stimulus_ref));
  }
  w.line("end");
  w.f32(block.samples.data(), block.samples.size());
  w.close();
}

RawBlock load_raw(const std::filesystem::path& path) {
  binio::Reader r(path, "ELIPR1");
  RawBlock b;
  std::size_t declared_onsets = 0;
  for (std::string line = r.line(); line != "end"; line = r.line()) {
    if (line.rfind("onset ", 0) == 0) {
      auto f = binio::parse_fields(line.substr(6));
      Onset o;
      o.sample = binio::to_size(f["sample"], "onset sample");
      o.label = static_cast<int>(binio::to_size(f["label"], "onset label"));
      if (f.count("stimulus")) o.stimulus_ref = static_cast<std::uint32_t>(binio::to_size(f["stimulus"], "stimulus"));
      b.onsets.push_back(o);
      continue;
    }
    auto [k, v] = binio::split_kv(line);
    if (k == "fs") b.fs = binio::to_double(v, k);
    else if (k == "channels") b.channels = binio::to_size(v, k);
    else if (k == "samples") b.length = binio::to_size(v, k);
    else if (k == "subject") b.subject_id = static_cast<std::uint32_t>(binio::to_size(v, k));
    else if (k == "task_id") b.task_id = static_cast<std::uint32_t>(binio::to_size(v, k));
    else if (k == "task") b.task = v;
    else if (k == "onsets") declared_onsets = binio::to_size(v, k);
    else if (k == "channel_names") {
      std::istringstream is(v);
      std::string name;
      while (std::getline(is, name, ',')) b.channel_names.push_back(name);
    }
  }
  if (b.onsets.size() != declared_onsets) throw FormatError(path.string() + ": onset table count mismatch");
  if (b.channels == 0 || b.length == 0) throw FormatError(path.string() + ": missing channels/samples");
  b.samples.resize(b.channels * b.length);
  r.f32(b.samples.data(), b.samples.size());
  if (!r.at_end()) throw ShapeError(path.string() + ": trailing bytes after declared payload");
  for (const Onset& o : b.onsets) {
    if (o.label != 0 && o.label != 1) throw DataError(path.string() + ": onset label must be 0 or 1");
  }
  b.validate();
  return b;
}

}  // namespace elip::signal
