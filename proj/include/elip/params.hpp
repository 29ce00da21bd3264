#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "elip/tensor.hpp"

namespace elip {

// Weight matrices are the only kind subject to weight decay.
enum class ParamKind { Weight, Bias, Gain, Positional };

struct ParamEntry {
  Tensor value;
  ParamKind kind = ParamKind::Weight;
};

// Owns every trainable tensor of a model under a dotted name. Iteration order
// is lexicographic by name, which is also the checkpoint order.
//
// Initialisation: weights ~ U(+-sqrt(6/(fan_in+fan_out))), biases 0,
// layer-norm gains 1, positional tables ~ N(0, 0.02).
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor weight(const std::string& name, std::size_t fan_in, std::size_t fan_out);
  // (K, kh, kw) bank for patch_conv.
  Tensor conv_kernels(const std::string& name, std::size_t count, std::size_t kh, std::size_t kw);
  Tensor bias(const std::string& name, std::size_t n);
  Tensor gain(const std::string& name, std::size_t n);
  Tensor positional(const std::string& name, std::size_t rows, std::size_t cols);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  const ParamEntry& entry(const std::string& name) const;
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }

  // Names starting with any of `prefixes` (all names when empty).
  std::vector<std::string> names(const std::vector<std::string>& prefixes = {}) const;

  std::size_t scalar_count() const;
  void zero_grad();
  // Rounds every value to the nearest float32, so an in-memory model equals
  // its checkpoint bit for bit.
  void round_to_float32();

 private:
  Tensor insert(const std::string& name, Tensor value, ParamKind kind);

  std::map<std::string, ParamEntry> entries_;
  std::mt19937_64 rng_;
};

// ELIPW1 checkpoint: "ELIPW1\n", text metadata lines, "end\n", then a
// little-endian float32 payload in lexicographic parameter order.
// Metadata lines are either `key=value` (free-form run metadata) or
// `param name=<n> shape=<a,b> dtype=f32 offset=<bytes>`.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const std::map<std::string, std::string>& metadata = {});

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::map<std::string, Tensor> tensors;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into an existing store; names and shapes must match
// exactly. Returns the checkpoint metadata.
std::map<std::string, std::string> load_checkpoint(const std::filesystem::path& path,
                                                   ParamStore& params);

}  // namespace elip
