#include "elip/prompt_encoder.hpp"

#include <cmath>

#include "elip/error.hpp"

namespace elip {

void PromptSpec::validate() const {
  if (target_prompt.empty() || nontarget_prompt.empty()) throw ConfigError("prompts must be non-empty");
}

void PromptSpec::check_matches(const EmbeddingBundle& bundle) const {
  validate();
  if (bundle.target_prompt != target_prompt || bundle.nontarget_prompt != nontarget_prompt) {
    throw ConfigError("prompt mismatch: bundle was built for target '" + bundle.target_prompt + "' / nontarget '" +
                      bundle.nontarget_prompt + "', requested '" + target_prompt + "' / '" + nontarget_prompt + "'");
  }
}

PromptEncoderParams PromptEncoderParams::make(ParamStore& store, std::size_t d_clip, const ModelConfig& cfg) {
  return {store.weight("pe.proj.W", d_clip, cfg.d_model), store.bias("pe.proj.b", cfg.d_model)};
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw NumericError("cosine_sim: zero vector");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

SemanticChoice choose_semantic(std::span<const double> image_enc, std::span<const double> text_target,
                               std::span<const double> text_nontarget) {
  const double s1 = cosine_sim(image_enc, text_target);
  const double s2 = cosine_sim(image_enc, text_nontarget);
  if (s1 > s2) return SemanticChoice::Target;
  if (s2 > s1) return SemanticChoice::Nontarget;
  return SemanticChoice::None;
}

std::vector<double> select_class_token(std::span<const double> image_enc, std::span<const double> text_target,
                                       std::span<const double> text_nontarget, std::span<const double> se_target,
                                       std::span<const double> se_nontarget, std::span<const double> class_token) {
  if (se_target.size() != class_token.size() || se_nontarget.size() != class_token.size()) {
    throw ShapeError("select_class_token: semantic embeddings must match the class token width");
  }
  std::vector<double> out(class_token.begin(), class_token.end());
  const SemanticChoice c = choose_semantic(image_enc, text_target, text_nontarget);
  if (c == SemanticChoice::None) return out;
  const auto se = c == SemanticChoice::Target ? se_target : se_nontarget;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += se[i];
  return out;
}

Tensor assemble_tokens(std::span<const double> class_token_se, const Tensor& patches, const Tensor& pos) {
  if (patches.rank() != 2 || pos.rank() != 2 || pos.size(0) != patches.size(0) + 1 ||
      pos.size(1) != patches.size(1) || class_token_se.size() != patches.size(1)) {
    throw ShapeError("assemble_tokens: class token " + std::to_string(class_token_se.size()) + ", patches " +
                     shape_str(patches.shape()) + ", positional table " + shape_str(pos.shape()));
  }
  const std::size_t d = patches.size(1);
  std::vector<double> rows(class_token_se.begin(), class_token_se.end());
  rows.insert(rows.end(), patches.data().begin(), patches.data().end());
  return add(Tensor({patches.size(0) + 1, d}, std::move(rows)), pos);
}

Tensor frozen_forward(const Tensor& tokens, const std::vector<FrozenLayer>& layers, std::size_t heads) {
  Tensor x = tokens;
  for (const FrozenLayer& L : layers) {
    const std::size_t d = L.wq.size(0);
    if (heads == 0 || d % heads != 0) throw ShapeError("frozen_forward: heads must divide d_clip");
    const std::size_t dh = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor h = layer_norm(x, L.ln1_gain, L.ln1_bias);
    Tensor q = matmul(h, L.wq) + L.bq, k = matmul(h, L.wk) + L.bk, v = matmul(h, L.wv) + L.bv;
    std::vector<Tensor> outs;
    for (std::size_t i = 0; i < heads; ++i) {
      Tensor qi = narrow_last(q, i * dh, dh), ki = narrow_last(k, i * dh, dh), vi = narrow_last(v, i * dh, dh);
      outs.push_back(matmul(softmax_rows(scale(matmul(qi, transpose(ki)), s)), vi));
    }
    Tensor attn = outs[0];
    for (std::size_t i = 1; i < heads; ++i) attn = concat_last(attn, outs[i]);
    x = x + (matmul(attn, L.wo) + L.bo);
    Tensor m = layer_norm(x, L.ln2_gain, L.ln2_bias);
    x = x + (matmul(gelu(matmul(m, L.fc1) + L.fc1_bias), L.fc2) + L.fc2_bias);
  }
  return x;
}

Tensor project_tokens(const Tensor& frozen_tokens, const PromptEncoderParams& pe) {
  return matmul(frozen_tokens, pe.w) + pe.b;
}

Tensor encode(const Tensor& tokens, const EmbeddingBundle& bundle, const PromptEncoderParams& pe) {
  return project_tokens(frozen_forward(tokens, bundle.layers, bundle.heads), pe);
}

Tensor frozen_image_tokens(const EmbeddingBundle& bundle, std::uint32_t ref) {
  auto enc_f = bundle.encoding(ref);
  std::vector<double> enc(enc_f.begin(), enc_f.end());
  const auto cls = select_class_token(enc, bundle.text_target, bundle.text_nontarget, bundle.se_target,
                                      bundle.se_nontarget, bundle.class_token);
  auto pf = bundle.patches(ref);
  Tensor patches({bundle.n_patch, bundle.d_clip}, std::vector<double>(pf.begin(), pf.end()));
  Tensor pos({bundle.n_patch + 1, bundle.d_clip}, bundle.pos_table);
  return frozen_forward(assemble_tokens(cls, patches, pos), bundle.layers, bundle.heads);
}

FrozenTokenTable::FrozenTokenTable(const EmbeddingBundle& bundle, const PromptSpec& prompts)
    : count_(bundle.image_count), tokens_(bundle.tokens()), width_(bundle.d_clip) {
  prompts.check_matches(bundle);
  bundle.validate();
  NoGradGuard guard;
  values_.reserve(count_ * tokens_ * width_);
  choices_.reserve(count_);
  for (std::uint32_t i = 0; i < count_; ++i) {
    auto enc_f = bundle.encoding(i);
    std::vector<double> enc(enc_f.begin(), enc_f.end());
    choices_.push_back(choose_semantic(enc, bundle.text_target, bundle.text_nontarget));
    Tensor t = frozen_image_tokens(bundle, i);
    values_.insert(values_.end(), t.data().begin(), t.data().end());
  }
}

std::span<const double> FrozenTokenTable::image(std::uint32_t ref) const {
  if (ref >= count_) throw DataError("image ref " + std::to_string(ref) + " outside table of " + std::to_string(count_));
  return {values_.data() + static_cast<std::size_t>(ref) * tokens_ * width_, tokens_ * width_};
}

}  // namespace elip
