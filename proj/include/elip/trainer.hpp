#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "elip/config.hpp"
#include "elip/dataset.hpp"
#include "elip/metrics.hpp"
#include "elip/model.hpp"

namespace elip {

// lr0 * decay^floor(epoch / period) for stage 1 or 2.
double lr_at(int stage, std::size_t epoch, const TrainConfig& cfg);

struct LossRecord {
  int stage = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step within the stage; epoch records use the last step
  double lr = 0.0;
  double l_cls = 0.0;
  double l_triplet = 0.0;
  double l_eeg = 0.0;
  double l_total = 0.0;

  // `stage=1 epoch=0 step=3 lr=0.001 l_cls=... l_triplet=... l_eeg=... l_total=...`
  std::string to_line() const;
};

struct TrainLog {
  std::vector<LossRecord> steps;
  std::vector<LossRecord> epochs;  // batch-size-weighted means per epoch
};

// EEG-only path (feature extractor, fusion encoder and conv, EEG head) on
// the EEG loss. Other parameters are untouched. Step lines go to `log_out`.
TrainLog train_stage1(const EpochDataset& train, ElipFormer& model, const TrainConfig& cfg,
                      std::ostream* log_out = nullptr);

// Every trainable parameter on the overall loss; frozen image tokens come
// from `images`.
TrainLog train_stage2(const EpochDataset& train, const ImageTokenSource& images, ElipFormer& model,
                      const TrainConfig& cfg, std::ostream* log_out = nullptr);

// Argmax of the fusion head; ties go to nontarget.
std::vector<int> predict(const ElipFormer& model, const EpochDataset& ds, const ImageTokenSource& images,
                         std::size_t batch = 256);

MetricsReport evaluate(const ElipFormer& model, const EpochDataset& test, const ImageTokenSource& images);

// Several image tables addressed as one, each table's refs offset by the
// sizes of the tables before it.
class StackedTokenSource : public ImageTokenSource {
 public:
  void add(std::shared_ptr<const ImageTokenSource> table);
  std::uint32_t offset(std::size_t table) const { return offsets_.at(table); }

  std::size_t image_count() const override { return total_; }
  std::size_t tokens() const override;
  std::size_t width() const override;
  std::span<const double> image(std::uint32_t ref) const override;

 private:
  std::vector<std::shared_ptr<const ImageTokenSource>> tables_;
  std::vector<std::uint32_t> offsets_;
  std::size_t total_ = 0;
};

struct CrossTaskResult {
  MetricsReport metrics;
  TrainLog stage1;
  TrainLog stage2;
  std::size_t train_epochs = 0;  // after balancing
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_file;
  std::filesystem::path loss_file;
};

// Load -> balance -> stage 1 -> stage 2 -> evaluate. Writes model.elipw,
// metrics.txt and losses.txt into the output directory. Train and test
// subject sets must be disjoint.
CrossTaskResult run_cross_task(const ExperimentConfig& cfg);

}  // namespace elip
