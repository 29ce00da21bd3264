#include "elip/bundle.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "binio.hpp"
#include "elip/error.hpp"

namespace elip {

namespace {

struct Section {
  std::string name;
  Shape dims;
  std::function<void(binio::Writer&)> write;
  std::function<void(binio::Reader&)> read;
};

Section vec_section(std::string name, std::vector<double>& v, Shape dims) {
  return {std::move(name), dims, [&v](binio::Writer& w) { w.f32(v.data(), v.size()); },
          [&v, dims](binio::Reader& r) {
            v.resize(shape_numel(dims));
            r.f32(v.data(), v.size());
          }};
}

Section float_section(std::string name, std::vector<float>& v, Shape dims) {
  return {std::move(name), dims, [&v](binio::Writer& w) { w.f32(v.data(), v.size()); },
          [&v, dims](binio::Reader& r) {
            v.resize(shape_numel(dims));
            r.f32(v.data(), v.size());
          }};
}

Section tensor_section(std::string name, Tensor& t, Shape dims) {
  return {std::move(name), dims, [&t](binio::Writer& w) { w.f32(t.data().data(), t.numel()); },
          [&t, dims](binio::Reader& r) {
            std::vector<double> v(shape_numel(dims));
            r.f32(v.data(), v.size());
            t = Tensor(dims, std::move(v));
          }};
}

// Canonical section list; the order here is the on-disk order.
std::vector<Section> sections(EmbeddingBundle& b) {
  const std::size_t d = b.d_clip, n = b.image_count;
  std::vector<Section> out;
  out.push_back(float_section("image.patch_tokens", b.patch_tokens, {n, b.n_patch, d}));
  out.push_back(float_section("image.encoding", b.image_encodings, {n, b.d_enc}));
  out.push_back(vec_section("y_cls", b.class_token, {d}));
  out.push_back(vec_section("pos_clip", b.pos_table, {b.n_patch + 1, d}));
  out.push_back(vec_section("text.target", b.text_target, {b.d_enc}));
  out.push_back(vec_section("text.nontarget", b.text_nontarget, {b.d_enc}));
  out.push_back(vec_section("se.target", b.se_target, {d}));
  out.push_back(vec_section("se.nontarget", b.se_nontarget, {d}));
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    FrozenLayer& L = b.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    const std::size_t hid = b.mlp_hidden;
    out.push_back(tensor_section(p + "ln1.gain", L.ln1_gain, {d}));
    out.push_back(tensor_section(p + "ln1.bias", L.ln1_bias, {d}));
    out.push_back(tensor_section(p + "attn.wq", L.wq, {d, d}));
    out.push_back(tensor_section(p + "attn.bq", L.bq, {d}));
    out.push_back(tensor_section(p + "attn.wk", L.wk, {d, d}));
    out.push_back(tensor_section(p + "attn.bk", L.bk, {d}));
    out.push_back(tensor_section(p + "attn.wv", L.wv, {d, d}));
    out.push_back(tensor_section(p + "attn.bv", L.bv, {d}));
    out.push_back(tensor_section(p + "attn.wo", L.wo, {d, d}));
    out.push_back(tensor_section(p + "attn.bo", L.bo, {d}));
    out.push_back(tensor_section(p + "ln2.gain", L.ln2_gain, {d}));
    out.push_back(tensor_section(p + "ln2.bias", L.ln2_bias, {d}));
    out.push_back(tensor_section(p + "mlp.fc1", L.fc1, {d, hid}));
    out.push_back(tensor_section(p + "mlp.fc1_bias", L.fc1_bias, {hid}));
    out.push_back(tensor_section(p + "mlp.fc2", L.fc2, {hid, d}));
    out.push_back(tensor_section(p + "mlp.fc2_bias", L.fc2_bias, {d}));
  }
  return out;
}

void check_finite(const std::string& what, std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("bundle section " + what + " holds a non-finite value");
  }
}

void check_finite(const std::string& what, std::span<const float> v) {
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericError("bundle section " + what + " holds a non-finite value");
  }
}

void check_single_line(const std::string& key, const std::string& value) {
  if (value.find('\n') != std::string::npos) throw FormatError("bundle " + key + " may not contain newlines");
}

}  // namespace

std::span<const float> EmbeddingBundle::patches(std::size_t image) const {
  if (image >= image_count) throw DataError("image index " + std::to_string(image) + " out of range");
  return {patch_tokens.data() + image * n_patch * d_clip, n_patch * d_clip};
}

std::span<const float> EmbeddingBundle::encoding(std::size_t image) const {
  if (image >= image_count) throw DataError("image index " + std::to_string(image) + " out of range");
  return {image_encodings.data() + image * d_enc, d_enc};
}

void EmbeddingBundle::validate() const {
  if (target_prompt.empty() || nontarget_prompt.empty()) throw FormatError("bundle prompts must be non-empty");
  if (d_clip == 0 || d_enc == 0 || n_patch == 0) throw ShapeError("bundle dimensions must be positive");
  if (!layers.empty() && (heads == 0 || d_clip % heads != 0)) {
    throw ShapeError("bundle heads=" + std::to_string(heads) + " does not divide d_clip=" + std::to_string(d_clip));
  }
  auto need = [](const std::string& what, std::size_t got, std::size_t want) {
    if (got != want) {
      throw ShapeError("bundle section " + what + " has " + std::to_string(got) + " values, expected " +
                       std::to_string(want));
    }
  };
  need("image.patch_tokens", patch_tokens.size(), image_count * n_patch * d_clip);
  need("image.encoding", image_encodings.size(), image_count * d_enc);
  need("y_cls", class_token.size(), d_clip);
  need("pos_clip", pos_table.size(), (n_patch + 1) * d_clip);
  need("text.target", text_target.size(), d_enc);
  need("text.nontarget", text_nontarget.size(), d_enc);
  need("se.target", se_target.size(), d_clip);
  need("se.nontarget", se_nontarget.size(), d_clip);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const FrozenLayer& L = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    const Shape dd{d_clip, d_clip};
    for (const auto* t : {&L.wq, &L.wk, &L.wv, &L.wo}) {
      if (!t->defined() || t->shape() != dd) throw ShapeError("bundle " + p + "attn weights must be d_clip x d_clip");
    }
    for (const auto* t : {&L.ln1_gain, &L.ln1_bias, &L.ln2_gain, &L.ln2_bias, &L.bq, &L.bk, &L.bv, &L.bo,
                          &L.fc2_bias}) {
      if (!t->defined() || t->shape() != Shape{d_clip}) throw ShapeError("bundle " + p + " vector must be d_clip");
    }
    if (!L.fc1.defined() || L.fc1.shape() != Shape{d_clip, mlp_hidden} || !L.fc1_bias.defined() ||
        L.fc1_bias.shape() != Shape{mlp_hidden} || !L.fc2.defined() || L.fc2.shape() != Shape{mlp_hidden, d_clip}) {
      throw ShapeError("bundle " + p + "mlp weights disagree with mlp_hidden=" + std::to_string(mlp_hidden));
    }
  }
  check_finite("image.patch_tokens", std::span<const float>(patch_tokens));
  check_finite("image.encoding", std::span<const float>(image_encodings));
  check_finite("y_cls", class_token);
  check_finite("pos_clip", pos_table);
  check_finite("text.target", text_target);
  check_finite("text.nontarget", text_nontarget);
  check_finite("se.target", se_target);
  check_finite("se.nontarget", se_nontarget);
}

FrozenLayer make_frozen_layer(std::size_t d, std::size_t hidden) {
  FrozenLayer L;
  L.ln1_gain = Tensor::full({d}, 1.0);
  L.ln1_bias = Tensor::zeros({d});
  L.wq = Tensor::zeros({d, d});
  L.bq = Tensor::zeros({d});
  L.wk = Tensor::zeros({d, d});
  L.bk = Tensor::zeros({d});
  L.wv = Tensor::zeros({d, d});
  L.bv = Tensor::zeros({d});
  L.wo = Tensor::zeros({d, d});
  L.bo = Tensor::zeros({d});
  L.ln2_gain = Tensor::full({d}, 1.0);
  L.ln2_bias = Tensor::zeros({d});
  L.fc1 = Tensor::zeros({d, hidden});
  L.fc1_bias = Tensor::zeros({hidden});
  L.fc2 = Tensor::zeros({hidden, d});
  L.fc2_bias = Tensor::zeros({d});
  return L;
}

void save_bundle(const std::filesystem::path& path, const EmbeddingBundle& bundle) {
  bundle.validate();
  for (const auto& [k, v] : {std::pair{"target_prompt", &bundle.target_prompt},
                             std::pair{"nontarget_prompt", &bundle.nontarget_prompt},
                             std::pair{"se_mapping", &bundle.se_mapping}}) {
    check_single_line(k, *v);
  }
  auto& b = const_cast<EmbeddingBundle&>(bundle);
  auto secs = sections(b);

  binio::Writer w(path);
  w.line("ELIPB1");
  w.line("d_clip=" + std::to_string(b.d_clip));
  w.line("d_enc=" + std::to_string(b.d_enc));
  w.line("n_patch=" + std::to_string(b.n_patch));
  w.line("layers=" + std::to_string(b.layers.size()));
  w.line("heads=" + std::to_string(b.heads));
  w.line("mlp_hidden=" + std::to_string(b.mlp_hidden));
  w.line("images=" + std::to_string(b.image_count));
  w.line("target_prompt=" + b.target_prompt);
  w.line("nontarget_prompt=" + b.nontarget_prompt);
  w.line("se_words=" + b.se_target_word + "," + b.se_nontarget_word);
  w.line("se_mapping=" + b.se_mapping);
  for (const auto& s : secs) w.line("section " + s.name + " " + binio::dims_str(s.dims));
  w.line("end");
  for (const auto& s : secs) s.write(w);
  w.close();
}

EmbeddingBundle load_bundle(const std::filesystem::path& path) {
  binio::Reader r(path, "ELIPB1");
  EmbeddingBundle b;
  std::size_t layer_count = 0;
  std::vector<std::pair<std::string, Shape>> declared;
  for (std::string line = r.line(); line != "end"; line = r.line()) {
    if (line.rfind("section ", 0) == 0) {
      std::istringstream is(line.substr(8));
      std::string name, dims;
      is >> name >> dims;
      declared.emplace_back(name, binio::parse_dims(dims));
      continue;
    }
    auto [k, v] = binio::split_kv(line);
    if (k == "d_clip") b.d_clip = binio::to_size(v, k);
    else if (k == "d_enc") b.d_enc = binio::to_size(v, k);
    else if (k == "n_patch") b.n_patch = binio::to_size(v, k);
    else if (k == "layers") layer_count = binio::to_size(v, k);
    else if (k == "heads") b.heads = binio::to_size(v, k);
    else if (k == "mlp_hidden") b.mlp_hidden = binio::to_size(v, k);
    else if (k == "images") b.image_count = binio::to_size(v, k);
    else if (k == "target_prompt") b.target_prompt = v;
    else if (k == "nontarget_prompt") b.nontarget_prompt = v;
    else if (k == "se_mapping") b.se_mapping = v;
    else if (k == "se_words") {
      auto comma = v.find(',');
      if (comma == std::string::npos) throw FormatError(path.string() + ": se_words needs two comma-separated words");
      b.se_target_word = v.substr(0, comma);
      b.se_nontarget_word = v.substr(comma + 1);
    }
  }
  b.layers.resize(layer_count);
  auto secs = sections(b);
  if (declared.size() != secs.size()) {
    throw ShapeError(path.string() + ": header declares " + std::to_string(declared.size()) + " sections, expected " +
                     std::to_string(secs.size()) + " for layers=" + std::to_string(layer_count));
  }
  for (std::size_t i = 0; i < secs.size(); ++i) {
    if (declared[i].first != secs[i].name || declared[i].second != secs[i].dims) {
      throw ShapeError(path.string() + ": section " + std::to_string(i) + " is '" + declared[i].first + " " +
                       binio::dims_str(declared[i].second) + "', expected '" + secs[i].name + " " +
                       binio::dims_str(secs[i].dims) + "'");
    }
  }
  for (auto& s : secs) s.read(r);
  if (!r.at_end()) throw ShapeError(path.string() + ": trailing bytes after the declared sections");
  b.validate();
  return b;
}

}  // namespace elip
