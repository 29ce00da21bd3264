#include "elip/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "elip/error.hpp"

namespace elip {

std::size_t EpochDataset::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(epochs.begin(), epochs.end(), [label](const EegEpoch& e) { return e.label == label; }));
}

std::vector<std::uint32_t> EpochDataset::subjects() const {
  std::set<std::uint32_t> ids;
  for (const auto& e : epochs) ids.insert(e.subject_id);
  return {ids.begin(), ids.end()};
}

EpochDataset EpochDataset::subset(std::span<const std::size_t> indices) const {
  EpochDataset out;
  out.meta = meta;
  out.channels = channels;
  out.samples = samples;
  out.epochs.reserve(indices.size());
  for (std::size_t i : indices) out.epochs.push_back(epochs.at(i));
  return out;
}

EpochDataset EpochDataset::for_subject(std::uint32_t subject_id) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (epochs[i].subject_id == subject_id) idx.push_back(i);
  }
  return subset(idx);
}

void EpochDataset::validate() const {
  for (const auto& e : epochs) {
    if (e.channels != channels || e.samples != samples || e.data.size() != channels * samples) {
      throw ShapeError("epoch shape (" + std::to_string(e.channels) + "x" + std::to_string(e.samples) +
                       ") differs from dataset shape (" + std::to_string(channels) + "x" +
                       std::to_string(samples) + ")");
    }
    if (e.label != kNontarget && e.label != kTarget) {
      throw DataError("epoch label " + std::to_string(e.label) + " outside {0,1}");
    }
  }
}

EpochDataset concat_datasets(const std::vector<EpochDataset>& parts) {
  if (parts.empty()) throw DataError("concat_datasets: nothing to concatenate");
  EpochDataset out;
  out.meta = parts.front().meta;
  out.channels = parts.front().channels;
  out.samples = parts.front().samples;
  for (const auto& p : parts) {
    if (p.channels != out.channels || p.samples != out.samples) {
      throw ShapeError("concat_datasets: epoch shapes differ between datasets");
    }
    out.epochs.insert(out.epochs.end(), p.epochs.begin(), p.epochs.end());
  }
  return out;
}

EpochDataset balance_downsample(const EpochDataset& train, std::uint64_t seed) {
  std::vector<std::size_t> targets, nontargets;
  for (std::size_t i = 0; i < train.epochs.size(); ++i) {
    (train.epochs[i].label == kTarget ? targets : nontargets).push_back(i);
  }
  if (targets.empty() || nontargets.empty()) {
    throw DataError("balance_downsample: training set must contain both classes (targets=" +
                    std::to_string(targets.size()) + ", nontargets=" + std::to_string(nontargets.size()) + ")");
  }
  if (nontargets.size() <= targets.size()) return train;

  std::mt19937_64 rng(seed);
  std::shuffle(nontargets.begin(), nontargets.end(), rng);
  nontargets.resize(targets.size());

  std::vector<std::size_t> keep = targets;
  keep.insert(keep.end(), nontargets.begin(), nontargets.end());
  std::sort(keep.begin(), keep.end());
  return train.subset(keep);
}

void save_epochs(const std::filesystem::path& path, const EpochDataset& ds) {
  ds.validate();
  binio::Writer w(path);
  w.line("ELIPE1");
  w.line("channels=" + std::to_string(ds.channels));
  w.line("samples=" + std::to_string(ds.samples));
  std::ostringstream fs;
  fs.precision(17);
  fs << ds.meta.fs;
  w.line("fs=" + fs.str());
  w.line("count=" + std::to_string(ds.epochs.size()));
  w.line("task=" + ds.meta.task);
  w.line("task_id=" + std::to_string(ds.meta.task_id));
  w.line("n_blk=" + std::to_string(ds.meta.n_blk));
  w.line("n_seq=" + std::to_string(ds.meta.n_seq));
  std::string names;
  for (std::size_t i = 0; i < ds.meta.channel_names.size(); ++i) names += (i ? "," : "") + ds.meta.channel_names[i];
  w.line("channel_names=" + names);
  std::string subjects;
  for (auto s : ds.subjects()) subjects += (subjects.empty() ? "" : ",") + std::to_string(s);
  w.line("subjects=" + subjects);
  w.line("end");
  for (const auto& e : ds.epochs) {
    w.u32(e.subject_id);
    w.u8(static_cast<std::uint8_t>(e.label));
    w.u32(e.stimulus_ref);
    w.f32(e.data.data(), e.data.size());
  }
  w.close();
}

EpochDataset load_epochs(const std::filesystem::path& path) {
  binio::Reader r(path, "ELIPE1");
  EpochDataset ds;
  std::size_t count = 0;
  bool have_count = false, have_c = false, have_t = false;
  std::set<std::uint32_t> subject_table;
  for (std::string line = r.line(); line != "end"; line = r.line()) {
    auto [k, v] = binio::split_kv(line);
    if (k == "channels") ds.channels = binio::to_size(v, k), have_c = true;
    else if (k == "samples") ds.samples = binio::to_size(v, k), have_t = true;
    else if (k == "fs") ds.meta.fs = binio::to_double(v, k);
    else if (k == "count") count = binio::to_size(v, k), have_count = true;
    else if (k == "task") ds.meta.task = v;
    else if (k == "task_id") ds.meta.task_id = static_cast<std::uint32_t>(binio::to_size(v, k));
    else if (k == "n_blk") ds.meta.n_blk = binio::to_size(v, k);
    else if (k == "n_seq") ds.meta.n_seq = binio::to_size(v, k);
    else if (k == "channel_names") {
      std::istringstream is(v);
      std::string name;
      while (std::getline(is, name, ',')) ds.meta.channel_names.push_back(name);
    } else if (k == "subjects") {
      for (auto s : binio::parse_dims(v)) subject_table.insert(static_cast<std::uint32_t>(s));
    }
  }
  if (!have_count || !have_c || !have_t || ds.channels == 0 || ds.samples == 0) {
    throw FormatError(path.string() + ": header lacks channels/samples/count");
  }
  if (!ds.meta.channel_names.empty() && ds.meta.channel_names.size() != ds.channels) {
    throw ShapeError(path.string() + ": channel name count differs from channels");
  }
  ds.epochs.resize(count);
  for (auto& e : ds.epochs) {
    e.subject_id = r.u32();
    e.label = r.u8();
    e.stimulus_ref = r.u32();
    e.channels = ds.channels;
    e.samples = ds.samples;
    e.task_id = ds.meta.task_id;
    e.data.resize(ds.channels * ds.samples);
    r.f32(e.data.data(), e.data.size());
    if (e.label != kNontarget && e.label != kTarget) {
      throw DataError(path.string() + ": epoch label " + std::to_string(e.label) + " outside {0,1}");
    }
    if (!subject_table.empty() && !subject_table.count(e.subject_id)) {
      throw ShapeError(path.string() + ": subject " + std::to_string(e.subject_id) + " missing from subject table");
    }
  }
  if (!r.at_end()) {
    throw ShapeError(path.string() + ": trailing bytes; declared count/shape disagree with payload");
  }
  return ds;
}

BatchIterator::BatchIterator(const EpochDataset& ds, const ImageTokenSource* images,
                             std::size_t batch_size, std::uint64_t shuffle_seed, bool shuffle)
    : ds_(ds), images_(images), batch_size_(batch_size), order_(ds.size()) {
  if (batch_size_ == 0) throw ConfigError("batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  if (images_) {
    for (const auto& e : ds_.epochs) {
      if (e.stimulus_ref >= images_->image_count()) {
        throw DataError("dangling stimulus_ref " + std::to_string(e.stimulus_ref) + " (bundle holds " +
                        std::to_string(images_->image_count()) + " images)");
      }
    }
  }
}

std::size_t BatchIterator::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  const std::size_t B = end - cursor_;
  const std::size_t C = ds_.channels, T = ds_.samples;
  std::vector<double> eeg(B * C * T);
  out.labels.resize(B);
  out.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                     order_.begin() + static_cast<std::ptrdiff_t>(end));
  for (std::size_t b = 0; b < B; ++b) {
    const EegEpoch& e = ds_.epochs[out.indices[b]];
    std::copy(e.data.begin(), e.data.end(), eeg.begin() + static_cast<std::ptrdiff_t>(b * C * T));
    out.labels[b] = e.label;
  }
  out.eeg = Tensor({B, C, T}, std::move(eeg));
  if (images_) {
    const std::size_t m = images_->tokens(), d = images_->width();
    std::vector<double> tok(B * m * d);
    for (std::size_t b = 0; b < B; ++b) {
      auto src = images_->image(ds_.epochs[out.indices[b]].stimulus_ref);
      std::copy(src.begin(), src.end(), tok.begin() + static_cast<std::ptrdiff_t>(b * m * d));
    }
    out.image_tokens = Tensor({B, m, d}, std::move(tok));
  } else {
    out.image_tokens = Tensor();
  }
  cursor_ = end;
  return true;
}

BatchIterator make_batches(const EpochDataset& ds, const ImageTokenSource* images,
                           std::size_t batch_size, std::uint64_t shuffle_seed) {
  return BatchIterator(ds, images, batch_size, shuffle_seed);
}

}  // namespace elip
