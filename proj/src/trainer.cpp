#include "elip/trainer.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "elip/bundle.hpp"
#include "elip/error.hpp"
#include "elip/log.hpp"
#include "elip/optim.hpp"
#include "elip/prompt_encoder.hpp"

namespace elip {

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, int stage, std::size_t epoch) {
  return seed * 1000003ull + static_cast<std::uint64_t>(stage) * 7919ull + epoch;
}

template <class StepFn>
TrainLog run_stage(int stage, const EpochDataset& train, const ImageTokenSource* images, Adam& opt,
                   ParamStore& store, const StageConfig& sc, const TrainConfig& cfg, std::ostream* out,
                   StepFn&& step_fn) {
  if (train.empty()) throw DataError("stage " + std::to_string(stage) + ": empty training set");
  TrainLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sc.epochs; ++epoch) {
    const double lr = lr_at(stage, epoch, cfg);
    opt.set_learning_rate(lr);
    BatchIterator it(train, images, sc.batch, epoch_seed(cfg.seed, stage, epoch));
    LossRecord acc{stage, epoch, 0, lr};
    std::size_t seen = 0;
    Batch batch;
    while (it.next(batch)) {
      store.zero_grad();
      LossRecord r{stage, epoch, step, lr};
      try {
        Tensor loss = step_fn(batch, r);
        backward(loss);
        opt.step();
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("stage {} epoch {} step {}: {}", stage, epoch, step, e.what()));
      }
      const double w = static_cast<double>(batch.labels.size());
      acc.l_cls += w * r.l_cls;
      acc.l_triplet += w * r.l_triplet;
      acc.l_eeg += w * r.l_eeg;
      acc.l_total += w * r.l_total;
      seen += batch.labels.size();
      if (out) *out << r.to_line() << '\n';
      log.steps.push_back(r);
      acc.step = step++;
    }
    const double n = static_cast<double>(seen);
    acc.l_cls /= n;
    acc.l_triplet /= n;
    acc.l_eeg /= n;
    acc.l_total /= n;
    log.epochs.push_back(acc);
  }
  store.zero_grad();
  return log;
}

AdamState adam_state(const TrainConfig& cfg, int stage) {
  AdamState s;
  s.learning_rate = stage == 1 ? cfg.stage1.lr0 : cfg.stage2.lr0;
  s.weight_decay = cfg.weight_decay;
  return s;
}

void check_refs(const EpochDataset& ds, const ImageTokenSource& images) {
  for (const auto& e : ds.epochs) {
    if (e.stimulus_ref >= images.image_count()) {
      throw DataError("stimulus_ref " + std::to_string(e.stimulus_ref) + " does not resolve in a table of " +
                      std::to_string(images.image_count()) + " images");
    }
  }
}

std::string write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  return text;
}

}  // namespace

double lr_at(int stage, std::size_t epoch, const TrainConfig& cfg) {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  const StageConfig& s = stage == 1 ? cfg.stage1 : cfg.stage2;
  double lr = s.lr0;
  for (std::size_t k = 0; k < epoch / s.period; ++k) lr *= s.decay;
  return lr;
}

std::string LossRecord::to_line() const {
  return fmt::format("stage={} epoch={} step={} lr={} l_cls={:.6f} l_triplet={:.6f} l_eeg={:.6f} l_total={:.6f}",
                     stage, epoch, step, lr, l_cls, l_triplet, l_eeg, l_total);
}

TrainLog train_stage1(const EpochDataset& train, ElipFormer& model, const TrainConfig& cfg, std::ostream* log_out) {
  cfg.validate();
  Adam opt(model.params(), model.stage1_names(), adam_state(cfg, 1));
  return run_stage(1, train, nullptr, opt, model.params(), cfg.stage1, cfg, log_out,
                   [&](const Batch& b, LossRecord& r) {
                     Tensor loss = cross_entropy(model.eeg_path_logits(b.eeg), b.labels);
                     r.l_eeg = r.l_total = loss.item();
                     return loss;
                   });
}

TrainLog train_stage2(const EpochDataset& train, const ImageTokenSource& images, ElipFormer& model,
                      const TrainConfig& cfg, std::ostream* log_out) {
  cfg.validate();
  check_refs(train, images);
  if (images.width() != model.d_clip()) {
    throw ShapeError("image tokens have width " + std::to_string(images.width()) + ", model expects d_clip " +
                     std::to_string(model.d_clip()));
  }
  Adam opt(model.params(), model.all_names(), adam_state(cfg, 2));
  return run_stage(2, train, &images, opt, model.params(), cfg.stage2, cfg, log_out,
                   [&](const Batch& b, LossRecord& r) {
                     ForwardResult f = model.forward(b.eeg, b.image_tokens);
                     LossBreakdown lb = overall_loss(f.fused, b.labels, model.fusion(), cfg.loss);
                     r.l_cls = lb.cls;
                     r.l_triplet = lb.triplet;
                     r.l_eeg = lb.eeg;
                     r.l_total = lb.total.item();
                     return lb.total;
                   });
}

std::vector<int> predict(const ElipFormer& model, const EpochDataset& ds, const ImageTokenSource& images,
                         std::size_t batch) {
  check_refs(ds, images);
  NoGradGuard guard;
  std::vector<int> pred(ds.size(), kNontarget);
  BatchIterator it(ds, &images, batch, 0, false);
  Batch b;
  while (it.next(b)) {
    Tensor logits = model.forward(b.eeg, b.image_tokens).cls_logits;
    const auto v = logits.data();
    for (std::size_t i = 0; i < b.indices.size(); ++i) {
      pred[b.indices[i]] = v[2 * i + 1] > v[2 * i] ? kTarget : kNontarget;
    }
  }
  return pred;
}

MetricsReport evaluate(const ElipFormer& model, const EpochDataset& test, const ImageTokenSource& images) {
  return subject_report(test, predict(model, test, images));
}

void StackedTokenSource::add(std::shared_ptr<const ImageTokenSource> table) {
  if (!tables_.empty() && (table->tokens() != tokens() || table->width() != width())) {
    throw ShapeError("stacked image tables must share token count and width");
  }
  offsets_.push_back(static_cast<std::uint32_t>(total_));
  total_ += table->image_count();
  tables_.push_back(std::move(table));
}

std::size_t StackedTokenSource::tokens() const { return tables_.at(0)->tokens(); }
std::size_t StackedTokenSource::width() const { return tables_.at(0)->width(); }

std::span<const double> StackedTokenSource::image(std::uint32_t ref) const {
  for (std::size_t t = tables_.size(); t-- > 0;) {
    if (ref >= offsets_[t]) {
      if (ref - offsets_[t] >= tables_[t]->image_count()) break;
      return tables_[t]->image(ref - offsets_[t]);
    }
  }
  throw DataError("image ref " + std::to_string(ref) + " outside stacked tables");
}

CrossTaskResult run_cross_task(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<EpochDataset> parts;
  StackedTokenSource train_images;
  std::size_t d_clip = 0;
  for (std::size_t i = 0; i < cfg.train_datasets.size(); ++i) {
    EpochDataset ds = load_epochs(cfg.train_datasets[i]);
    EmbeddingBundle bundle = load_bundle(cfg.train_bundles[i]);
    auto table = std::make_shared<FrozenTokenTable>(bundle, PromptSpec{cfg.train_prompts[i], cfg.nontarget_prompt});
    check_refs(ds, *table);
    if (d_clip != 0 && bundle.d_clip != d_clip) throw ShapeError("training bundles disagree on d_clip");
    d_clip = bundle.d_clip;
    train_images.add(table);
    const std::uint32_t off = train_images.offset(i);
    for (auto& e : ds.epochs) e.stimulus_ref += off;
    parts.push_back(std::move(ds));
  }
  EpochDataset train = concat_datasets(parts);
  EpochDataset test = load_epochs(cfg.test_dataset);
  EmbeddingBundle test_bundle = load_bundle(cfg.test_bundle);
  if (test_bundle.d_clip != d_clip) throw ShapeError("test bundle d_clip differs from the training bundles");
  FrozenTokenTable test_images(test_bundle, PromptSpec{cfg.test_prompt, cfg.nontarget_prompt});

  const auto train_subjects = train.subjects();
  const auto test_subjects = test.subjects();
  std::vector<std::uint32_t> overlap;
  std::set_intersection(train_subjects.begin(), train_subjects.end(), test_subjects.begin(), test_subjects.end(),
                        std::back_inserter(overlap));
  if (!overlap.empty()) {
    throw DataError("train and test share subject id " + std::to_string(overlap.front()) +
                    "; cross-task evaluation requires disjoint subjects");
  }
  if (train.channels != cfg.model.channels || train.samples < cfg.model.samples || test.channels != train.channels ||
      test.samples != train.samples) {
    throw ShapeError("dataset epochs (" + std::to_string(train.channels) + "x" + std::to_string(train.samples) +
                     ") do not match model C/T");
  }

  EpochDataset balanced = balance_downsample(train, cfg.train.seed);
  log::info(fmt::format("training on {} balanced epochs ({} before balancing), testing on {} epochs",
                        balanced.size(), train.size(), test.size()));

  std::filesystem::create_directories(cfg.output_dir);
  CrossTaskResult res;
  res.train_epochs = balanced.size();
  res.loss_file = cfg.output_dir / "losses.txt";
  res.checkpoint = cfg.output_dir / "model.elipw";
  res.metrics_file = cfg.output_dir / "metrics.txt";

  ElipFormer model(cfg.model, d_clip, cfg.train.seed);
  {
    std::ofstream losses(res.loss_file, std::ios::binary);
    if (!losses) throw Error("cannot write " + res.loss_file.string());
    res.stage1 = train_stage1(balanced, model, cfg.train, &losses);
    res.stage2 = train_stage2(balanced, train_images, model, cfg.train, &losses);
  }
  model.params().round_to_float32();
  model.save(res.checkpoint, {{"seed", std::to_string(cfg.train.seed)}});
  res.metrics = evaluate(model, test, test_images);
  write_text(res.metrics_file, res.metrics.to_text());
  return res;
}

}  // namespace elip
