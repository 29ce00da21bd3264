#include "elip/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "elip/error.hpp"

namespace elip {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

void ModelConfig::validate() const {
  require(channels > 0 && samples > 0 && slice_len > 0 && d_model > 0 && heads > 0 && n_cross > 0,
          "model dimensions must be positive");
  require(slice_len <= samples, "model.t exceeds model.T");
  require(d_model % heads == 0, "model.d_model must be divisible by model.h");
  require(d_model % 8 == 0, "model.d_model must be divisible by 8");
}

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.slice_len = 25;
  c.d_model = 32;
  c.heads = 2;
  c.n_cross = 2;
  return c;
}

void TrainConfig::validate() const {
  for (const auto* s : {&stage1, &stage2}) {
    require(s->lr0 > 0 && s->batch > 0 && s->period > 0, "stage lr0, batch and period must be positive");
    require(s->decay > 0 && s->decay <= 1, "stage decay must lie in (0, 1]");
  }
  require(weight_decay >= 0, "train.weight_decay must be non-negative");
  require(loss.margin >= 0, "train.margin must be non-negative");
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig kv;
  kv.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value, got '" + line + "'");
    }
    kv.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) != 0; }

void KeyValueConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::string KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  read_.insert(key);
  return it->second;
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(origin_ + ": key '" + key + "' expects a number, got '" + v + "'");
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] != '-') {
      auto n = std::stoull(v, &pos);
      if (pos == v.size()) return n;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(origin_ + ": key '" + key + "' expects a non-negative integer, got '" + v + "'");
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(origin_ + ": key '" + key + "' expects on/off, got '" + v + "'");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  if (!has(key)) return out;
  std::istringstream is(get(key));
  std::string item;
  while (std::getline(is, item, ';')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unread() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!read_.count(k)) out.push_back(k);
  }
  return out;
}

ModelConfig model_from(const KeyValueConfig& kv) {
  const std::string profile = kv.get("profile", "paper");
  ModelConfig c;
  if (profile == "desk") c = ModelConfig::desk();
  else if (profile != "paper") throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  c.channels = kv.get_size("model.C", c.channels);
  c.samples = kv.get_size("model.T", c.samples);
  c.slice_len = kv.get_size("model.t", c.slice_len);
  c.d_model = kv.get_size("model.d_model", c.d_model);
  c.heads = kv.get_size("model.h", c.heads);
  c.n_cross = kv.get_size("model.n_cross", c.n_cross);
  c.attn_scale = kv.get_bool("attn.scale", c.attn_scale);
  c.col_path = kv.get_bool("model.col_path", c.col_path);
  c.validate();
  return c;
}

TrainConfig train_from(const KeyValueConfig& kv) {
  TrainConfig t;
  auto stage = [&kv](const std::string& p, StageConfig& s) {
    s.lr0 = kv.get_double(p + ".lr", s.lr0);
    s.decay = kv.get_double(p + ".decay", s.decay);
    s.period = kv.get_size(p + ".period", s.period);
    s.batch = kv.get_size(p + ".batch", s.batch);
    s.epochs = kv.get_size(p + ".epochs", s.epochs);
  };
  stage("train.stage1", t.stage1);
  stage("train.stage2", t.stage2);
  t.weight_decay = kv.get_double("train.weight_decay", t.weight_decay);
  t.loss.margin = kv.get_double("train.margin", t.loss.margin);
  t.seed = kv.get_u64("seed", t.seed);
  t.validate();
  return t;
}

std::map<std::string, std::string> model_to_metadata(const ModelConfig& c) {
  return {{"model.C", std::to_string(c.channels)},
          {"model.T", std::to_string(c.samples)},
          {"model.t", std::to_string(c.slice_len)},
          {"model.d_model", std::to_string(c.d_model)},
          {"model.h", std::to_string(c.heads)},
          {"model.n_cross", std::to_string(c.n_cross)},
          {"attn.scale", c.attn_scale ? "on" : "off"},
          {"model.col_path", c.col_path ? "on" : "off"}};
}

ModelConfig model_from_metadata(const std::map<std::string, std::string>& meta) {
  KeyValueConfig kv;
  for (const auto& [k, v] : meta) {
    if (k.rfind("model.", 0) == 0 || k == "attn.scale") kv.set(k, v);
  }
  for (const char* k : {"model.C", "model.T", "model.t", "model.d_model", "model.h", "model.n_cross"}) {
    if (!kv.has(k)) throw FormatError(std::string("checkpoint metadata lacks ") + k);
  }
  return model_from(kv);
}

ExperimentConfig ExperimentConfig::from(const KeyValueConfig& kv) {
  ExperimentConfig e;
  e.model = model_from(kv);
  e.train = train_from(kv);
  for (const auto& p : kv.get_list("train.datasets")) e.train_datasets.emplace_back(p);
  for (const auto& p : kv.get_list("train.bundles")) e.train_bundles.emplace_back(p);
  e.train_prompts = kv.get_list("train.prompts");
  e.test_dataset = kv.get("test.dataset", "");
  e.test_bundle = kv.get("test.bundle", "");
  e.test_prompt = kv.get("test.prompt", "");
  e.nontarget_prompt = kv.get("prompt.nontarget", e.nontarget_prompt);
  e.output_dir = kv.get("output.dir", e.output_dir.string());
  kv.get("preproc.order", "safe");
  if (auto extra = kv.unread(); !extra.empty()) {
    std::string list;
    for (const auto& k : extra) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + list);
  }
  e.validate();
  return e;
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  require(!train_datasets.empty(), "train.datasets is empty");
  require(train_bundles.size() == train_datasets.size(), "train.bundles must pair one bundle with each dataset");
  require(train_prompts.size() == train_datasets.size(), "train.prompts must pair one prompt with each dataset");
  require(!test_dataset.empty() && !test_bundle.empty() && !test_prompt.empty(),
          "test.dataset, test.bundle and test.prompt are required");
}

}  // namespace elip
