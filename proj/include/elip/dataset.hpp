#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "elip/tensor.hpp"

namespace elip {

enum Label : int { kNontarget = 0, kTarget = 1 };

// One preprocessed trial, channel-major C x T.
struct EegEpoch {
  std::size_t channels = 0;
  std::size_t samples = 0;
  std::vector<float> data;
  int label = kNontarget;
  std::uint32_t subject_id = 0;
  std::uint32_t task_id = 0;
  std::uint32_t stimulus_ref = 0;
};

struct DatasetMeta {
  std::string task = "task";
  std::uint32_t task_id = 0;
  std::size_t n_blk = 0;
  std::size_t n_seq = 0;
  double fs = 250.0;
  std::vector<std::string> channel_names;
};

class EpochDataset {
 public:
  DatasetMeta meta;
  std::size_t channels = 64;
  std::size_t samples = 250;
  std::vector<EegEpoch> epochs;

  std::size_t size() const { return epochs.size(); }
  bool empty() const { return epochs.empty(); }
  std::size_t count_label(int label) const;
  std::vector<std::uint32_t> subjects() const;

  EpochDataset subset(std::span<const std::size_t> indices) const;
  EpochDataset for_subject(std::uint32_t subject_id) const;

  // Shape and label-set consistency; throws ShapeError / DataError.
  void validate() const;
};

// Concatenates datasets of equal (C, T); metadata is taken from the first.
EpochDataset concat_datasets(const std::vector<EpochDataset>& parts);

// Random nontarget subsampling (without replacement) down to the target
// count. Epoch contents are untouched and relative order is preserved.
EpochDataset balance_downsample(const EpochDataset& train, std::uint64_t seed);

// "ELIPE1" epoch store.
void save_epochs(const std::filesystem::path& path, const EpochDataset& ds);
EpochDataset load_epochs(const std::filesystem::path& path);

// Per-image token matrices (tokens x width) addressed by stimulus_ref.
class ImageTokenSource {
 public:
  virtual ~ImageTokenSource() = default;
  virtual std::size_t image_count() const = 0;
  virtual std::size_t tokens() const = 0;
  virtual std::size_t width() const = 0;
  virtual std::span<const double> image(std::uint32_t ref) const = 0;
};

struct Batch {
  Tensor eeg;           // (B, C, T)
  Tensor image_tokens;  // (B, m, width); undefined without an image source
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions in the source dataset
};

// Deterministic shuffled mini-batches; the final short batch is kept.
class BatchIterator {
 public:
  BatchIterator(const EpochDataset& ds, const ImageTokenSource* images, std::size_t batch_size,
                std::uint64_t shuffle_seed, bool shuffle = true);

  bool next(Batch& out);
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const EpochDataset& ds_;
  const ImageTokenSource* images_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

BatchIterator make_batches(const EpochDataset& ds, const ImageTokenSource* images,
                           std::size_t batch_size, std::uint64_t shuffle_seed);

}  // namespace elip
