#include "elip/params.hpp"

#include <cmath>

#include "binio.hpp"
#include "elip/error.hpp"

namespace elip {

Tensor ParamStore::insert(const std::string& name, Tensor value, ParamKind kind) {
  if (entries_.count(name)) throw ConfigError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  entries_.emplace(name, ParamEntry{value, kind});
  return value;
}

Tensor ParamStore::weight(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = dist(rng_);
  return insert(name, Tensor({fan_in, fan_out}, std::move(v)), ParamKind::Weight);
}

Tensor ParamStore::conv_kernels(const std::string& name, std::size_t count, std::size_t kh,
                                std::size_t kw) {
  const std::size_t fan_in = kh * kw;
  const std::size_t fan_out = count * kh * kw;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(count * kh * kw);
  for (double& x : v) x = dist(rng_);
  return insert(name, Tensor({count, kh, kw}, std::move(v)), ParamKind::Weight);
}

Tensor ParamStore::bias(const std::string& name, std::size_t n) {
  return insert(name, Tensor::zeros({n}), ParamKind::Bias);
}

Tensor ParamStore::gain(const std::string& name, std::size_t n) {
  return insert(name, Tensor::full({n}, 1.0), ParamKind::Gain);
}

Tensor ParamStore::positional(const std::string& name, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> dist(0.0, 0.02);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng_);
  return insert(name, Tensor({rows, cols}, std::move(v)), ParamKind::Positional);
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const { return entry(name).value; }

std::vector<std::string> ParamStore::names(const std::vector<std::string>& prefixes) const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) {
    bool keep = prefixes.empty();
    for (const auto& p : prefixes) keep = keep || name.rfind(p, 0) == 0;
    if (keep) out.push_back(name);
  }
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_) e.value.zero_grad();
}

void ParamStore::round_to_float32() {
  for (auto& [name, e] : entries_) {
    for (double& x : e.value.mutable_data()) x = static_cast<double>(static_cast<float>(x));
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const std::map<std::string, std::string>& metadata) {
  binio::Writer w(path);
  w.line("ELIPW1");
  for (const auto& [k, v] : metadata) {
    if (k == "param" || k == "end" || k.find('=') != std::string::npos) {
      throw ConfigError("reserved checkpoint metadata key " + k);
    }
    w.line(k + "=" + v);
  }
  std::size_t offset = 0;
  for (const auto& [name, e] : params.entries()) {
    w.line("param name=" + name + " shape=" + binio::dims_str(e.value.shape()) +
           " dtype=f32 offset=" + std::to_string(offset));
    offset += e.value.numel() * 4;
  }
  w.line("end");
  for (const auto& [name, e] : params.entries()) w.f32(e.value.data().data(), e.value.numel());
  w.close();
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  binio::Reader r(path, "ELIPW1");
  Checkpoint ck;
  struct Decl {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Decl> decls;
  for (std::string line = r.line(); line != "end"; line = r.line()) {
    if (line.rfind("param ", 0) == 0) {
      auto f = binio::parse_fields(line.substr(6));
      if (!f.count("name") || !f.count("shape") || !f.count("offset")) {
        throw FormatError(path.string() + ": malformed param line '" + line + "'");
      }
      if (f.count("dtype") && f["dtype"] != "f32") {
        throw FormatError(path.string() + ": unsupported dtype " + f["dtype"]);
      }
      decls.push_back({f["name"], binio::parse_dims(f["shape"]), binio::to_size(f["offset"], "offset")});
    } else {
      auto [k, v] = binio::split_kv(line);
      ck.metadata[k] = v;
    }
  }
  std::size_t expected = 0;
  for (const auto& d : decls) {
    if (d.offset != expected) throw FormatError(path.string() + ": offset mismatch for " + d.name);
    std::vector<double> v(shape_numel(d.shape));
    r.f32(v.data(), v.size());
    expected += v.size() * 4;
    ck.tensors.emplace(d.name, Tensor(d.shape, std::move(v)));
  }
  if (!r.at_end()) throw ShapeError(path.string() + ": trailing bytes after declared payload");
  return ck;
}

std::map<std::string, std::string> load_checkpoint(const std::filesystem::path& path,
                                                   ParamStore& params) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.tensors.size() != params.entries().size()) {
    throw ShapeError(path.string() + ": checkpoint holds " + std::to_string(ck.tensors.size()) +
                     " parameters, model expects " + std::to_string(params.entries().size()));
  }
  for (const auto& [name, e] : params.entries()) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw ShapeError(path.string() + ": missing parameter " + name);
    if (it->second.shape() != e.value.shape()) {
      throw ShapeError(path.string() + ": parameter " + name + " has shape " +
                       shape_str(it->second.shape()) + ", model expects " + shape_str(e.value.shape()));
    }
  }
  for (const auto& [name, e] : params.entries()) {
    Tensor dst = e.value;
    auto src = ck.tensors.at(name).data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
  return ck.metadata;
}

}  // namespace elip
