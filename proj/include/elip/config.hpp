#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace elip {

struct ModelConfig {
  std::size_t channels = 64;   // C
  std::size_t samples = 250;   // T
  std::size_t slice_len = 5;   // t
  std::size_t d_model = 128;
  std::size_t heads = 4;       // h
  std::size_t n_cross = 2;
  bool attn_scale = true;      // 1/sqrt(d_head) in the cross paths
  bool col_path = true;        // false drops the column-softmax path

  std::size_t n_slices() const { return samples / slice_len; }
  std::size_t d_head() const { return d_model / heads; }
  std::size_t ffn_hidden() const { return heads * d_model; }
  std::size_t conv_width() const { return d_model / 8; }
  std::size_t conv_kernels() const { return d_model / 8; }

  // Throws ConfigError.
  void validate() const;

  static ModelConfig paper();
  static ModelConfig desk();
};

struct StageConfig {
  double lr0 = 1e-3;
  double decay = 0.8;
  std::size_t period = 10;
  std::size_t batch = 64;
  std::size_t epochs = 30;
};

struct LossConfig {
  double margin = 0.5;
  double w_cls = 1.0;
  double w_triplet = 1.0;
  double w_eeg = 1.0;
};

struct TrainConfig {
  StageConfig stage1{1e-3, 0.8, 10, 64, 30};
  StageConfig stage2{1e-3, 0.8, 20, 1024, 50};
  double weight_decay = 0.01;
  LossConfig loss{};
  std::uint64_t seed = 0;

  void validate() const;
};

// Flat `key=value` text. '#' starts a comment; blank lines are ignored.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // `a;b;c` lists.
  std::vector<std::string> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  // Keys never read through a getter; used to reject typos.
  std::vector<std::string> unread() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
  std::string origin_;
};

// profile=desk|paper then model.* / attn.scale overrides.
ModelConfig model_from(const KeyValueConfig& kv);
TrainConfig train_from(const KeyValueConfig& kv);

std::map<std::string, std::string> model_to_metadata(const ModelConfig& cfg);
ModelConfig model_from_metadata(const std::map<std::string, std::string>& meta);

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::filesystem::path> train_datasets;
  std::vector<std::filesystem::path> train_bundles;
  std::vector<std::string> train_prompts;
  std::filesystem::path test_dataset;
  std::filesystem::path test_bundle;
  std::string test_prompt;
  std::string nontarget_prompt = "nontarget background";
  std::filesystem::path output_dir = "run";

  static ExperimentConfig from(const KeyValueConfig& kv);
  void validate() const;
};

}  // namespace elip
