#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "elip/bundle.hpp"
#include "elip/config.hpp"
#include "elip/dataset.hpp"
#include "elip/error.hpp"
#include "elip/gradcheck.hpp"
#include "elip/hdca.hpp"
#include "elip/model.hpp"
#include "elip/prompt_encoder.hpp"
#include "elip/signal.hpp"
#include "elip/synthetic.hpp"
#include "elip/trainer.hpp"

namespace fs = std::filesystem;
using namespace elip;

namespace {

struct SynthArgs {
  fs::path out = "synth";
  unsigned tasks = 2;
  std::size_t subjects = 4;
  std::size_t n_blk = 1;
  std::size_t n_seq = 14;
  std::size_t channels = 64;
  std::uint64_t seed = 0;
  bool zero_erp = false;
  std::size_t raw_onsets = 0;
};

int cmd_synth(const SynthArgs& a) {
  fs::create_directories(a.out);
  for (unsigned k = 0; k < a.tasks; ++k) {
    SyntheticConfig cfg = SyntheticConfig::task_preset(k);
    cfg.subjects = a.subjects;
    cfg.n_blk = a.n_blk;
    cfg.n_seq = a.n_seq;
    cfg.channels = a.channels;
    cfg.seed += a.seed;
    if (a.zero_erp) cfg.n200_amp = cfg.p300_amp = 0.0;
    SyntheticData d = synth_generate(cfg);
    const fs::path epochs = a.out / (cfg.task + ".elipe"), bundle = a.out / (cfg.task + ".elipb");
    save_epochs(epochs, d.dataset);
    save_bundle(bundle, d.bundle);
    std::cout << fmt::format("{} prompt={} epochs={} targets={} subjects={}..{} -> {}, {}\n", cfg.task,
                             cfg.target_prompt, d.dataset.size(), d.dataset.count_label(kTarget), cfg.subject_id(0),
                             cfg.subject_id(cfg.subjects - 1), epochs.string(), bundle.string());
    if (a.raw_onsets) {
      const fs::path raw = a.out / (cfg.task + ".elipr");
      signal::save_raw(raw, synth_raw_block(cfg, 0, 1000.0, a.raw_onsets));
      std::cout << fmt::format("{} raw block -> {}\n", cfg.task, raw.string());
    }
  }
  return 0;
}

int cmd_preprocess(const std::vector<fs::path>& inputs, const fs::path& out, const std::string& order) {
  signal::PreprocConfig pc;
  pc.order = signal::parse_order(order);
  EpochDataset ds;
  bool first = true;
  for (const auto& in : inputs) {
    signal::RawBlock block = signal::load_raw(in);
    signal::EpochingResult r = signal::preprocess(block, pc);
    if (first) {
      ds.channels = block.channels;
      ds.samples = r.epochs.empty() ? 0 : r.epochs.front().samples;
      ds.meta.task = block.task;
      ds.meta.task_id = block.task_id;
      ds.meta.fs = block.fs / pc.decimation;
      ds.meta.channel_names = block.channel_names;
      first = false;
    }
    ++ds.meta.n_blk;
    ds.epochs.insert(ds.epochs.end(), r.epochs.begin(), r.epochs.end());
    std::cout << fmt::format("{}: {} epochs, {} dropped\n", in.string(), r.epochs.size(), r.dropped);
  }
  if (ds.samples == 0) throw DataError("no epochs produced");
  save_epochs(out, ds);
  return 0;
}

int cmd_train(const fs::path& config, const std::vector<std::string>& overrides) {
  KeyValueConfig kv = KeyValueConfig::load(config);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  ExperimentConfig exp = ExperimentConfig::from(kv);
  CrossTaskResult r = run_cross_task(exp);
  std::cout << r.metrics.to_text();
  std::cout << fmt::format("checkpoint {}\nmetrics {}\nlosses {}\n", r.checkpoint.string(), r.metrics_file.string(),
                           r.loss_file.string());
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& bundle_path,
             const std::string& prompt, const fs::path& out) {
  ElipFormer model = ElipFormer::load(checkpoint);
  EpochDataset test = load_epochs(dataset);
  EmbeddingBundle bundle = load_bundle(bundle_path);
  FrozenTokenTable images(bundle, PromptSpec{prompt});
  const std::string text = evaluate(model, test, images).to_text();
  std::cout << text;
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    f << text;
  }
  return 0;
}

int cmd_baseline(const std::vector<fs::path>& train_paths, const fs::path& test_path, std::uint64_t seed) {
  std::vector<EpochDataset> parts;
  for (const auto& p : train_paths) parts.push_back(load_epochs(p));
  std::cout << baseline_hdca(concat_datasets(parts), load_epochs(test_path), seed).to_text();
  return 0;
}

int cmd_gradcheck(int seeds, bool desk, std::size_t max_coords) {
  gradcheck::Options opt;
  opt.max_coords = max_coords;
  const auto prim = gradcheck::primitive_suite(seeds, opt);
  std::cout << fmt::format("primitives: {} checks, worst rel error {:.3e} -> {}\n", prim.results.size(), prim.worst(),
                           prim.ok() ? "pass" : "FAIL");
  const auto model = gradcheck::model_suite(desk ? 1 : seeds, desk, opt);
  std::cout << fmt::format("model ({}): {} tensors, worst rel error {:.3e} -> {}\n", desk ? "desk" : "miniature",
                           model.results.size(), model.worst(), model.ok() ? "pass" : "FAIL");
  for (const auto* rep : {&prim, &model}) {
    for (const auto& r : rep->results) {
      if (!r.ok) std::cout << fmt::format("  {} rel={:.3e} coords={}\n", r.name, r.rel_error, r.coords);
    }
  }
  return prim.ok() && model.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ELIPformer training and evaluation engine"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write synthetic task datasets and embedding bundles");
  synth->add_option("--out", sa.out, "output directory");
  synth->add_option("--tasks", sa.tasks, "number of tasks (template shift cycles over three presets)");
  synth->add_option("--subjects", sa.subjects, "subjects per task");
  synth->add_option("--n-blk", sa.n_blk, "blocks per subject");
  synth->add_option("--n-seq", sa.n_seq, "sequences per block");
  synth->add_option("--channels", sa.channels, "EEG channels");
  synth->add_option("--seed", sa.seed, "seed offset");
  synth->add_flag("--zero-erp", sa.zero_erp, "omit the target templates");
  synth->add_option("--raw-onsets", sa.raw_onsets, "also write a 1000 Hz raw block with this many onsets");

  std::vector<fs::path> pre_in;
  fs::path pre_out;
  std::string pre_order = "safe";
  auto* pre = app.add_subcommand("preprocess", "raw blocks (ELIPR1) to an epoch store (ELIPE1)");
  pre->add_option("--in", pre_in, "raw block files")->required();
  pre->add_option("--out", pre_out, "epoch store")->required();
  pre->add_option("--order", pre_order, "safe (filter then decimate) or paper (decimate then filter)");

  fs::path train_cfg;
  std::vector<std::string> train_set;
  auto* train = app.add_subcommand("train", "run a cross-task experiment from a key=value config");
  train->add_option("config", train_cfg, "experiment config")->required();
  train->add_option("--set", train_set, "override key=value");

  fs::path ev_ck, ev_ds, ev_bundle, ev_out;
  std::string ev_prompt;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a test set");
  ev->add_option("--checkpoint", ev_ck)->required();
  ev->add_option("--dataset", ev_ds)->required();
  ev->add_option("--bundle", ev_bundle)->required();
  ev->add_option("--prompt", ev_prompt, "target prompt the bundle was built for")->required();
  ev->add_option("--out", ev_out, "metrics file");

  std::vector<fs::path> bl_train;
  fs::path bl_test;
  std::uint64_t bl_seed = 0;
  auto* bl = app.add_subcommand("baseline", "HDCA baseline");
  bl->add_option("--train", bl_train)->required();
  bl->add_option("--test", bl_test)->required();
  bl->add_option("--seed", bl_seed);

  int gc_seeds = 20;
  bool gc_desk = false;
  std::size_t gc_coords = 0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seeds", gc_seeds);
  gc->add_flag("--desk", gc_desk, "check the desk-profile model instead of the miniature one");
  gc->add_option("--max-coords", gc_coords, "coordinates probed per tensor (0 = all)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(sa);
    if (*pre) return cmd_preprocess(pre_in, pre_out, pre_order);
    if (*train) return cmd_train(train_cfg, train_set);
    if (*ev) return cmd_eval(ev_ck, ev_ds, ev_bundle, ev_prompt, ev_out);
    if (*bl) return cmd_baseline(bl_train, bl_test, bl_seed);
    if (*gc) return cmd_gradcheck(gc_seeds, gc_desk, gc_coords);
  } catch (const elip::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
