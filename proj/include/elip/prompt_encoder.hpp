#pragma once

#include <span>
#include <string>
#include <vector>

#include "elip/bundle.hpp"
#include "elip/config.hpp"
#include "elip/dataset.hpp"
#include "elip/params.hpp"
#include "elip/tensor.hpp"

namespace elip {

struct PromptSpec {
  std::string target_prompt;
  std::string nontarget_prompt = "nontarget background";

  void validate() const;
  // Throws ConfigError unless the bundle was built from exactly these prompts.
  void check_matches(const EmbeddingBundle& bundle) const;
};

// The trainable d_clip -> d_model projection ("pe.proj.W", "pe.proj.b").
struct PromptEncoderParams {
  Tensor w, b;

  static PromptEncoderParams make(ParamStore& store, std::size_t d_clip, const ModelConfig& cfg);
};

// Throws NumericError for a zero vector.
double cosine_sim(std::span<const double> a, std::span<const double> b);

enum class SemanticChoice { Target, Nontarget, None };

// Strict comparisons only; an exact tie selects nothing.
SemanticChoice choose_semantic(std::span<const double> image_enc, std::span<const double> text_target,
                               std::span<const double> text_nontarget);

std::vector<double> select_class_token(std::span<const double> image_enc, std::span<const double> text_target,
                                       std::span<const double> text_nontarget, std::span<const double> se_target,
                                       std::span<const double> se_nontarget, std::span<const double> class_token);

// Row 0 = class token, rows 1.. = patches, plus the positional table.
// patches: (n_patch, d), pos: (n_patch + 1, d) -> (n_patch + 1, d).
Tensor assemble_tokens(std::span<const double> class_token_se, const Tensor& patches, const Tensor& pos);

// Pre-norm ViT blocks over (..., m, d_clip). Weights never require grad.
Tensor frozen_forward(const Tensor& tokens, const std::vector<FrozenLayer>& layers, std::size_t heads);

Tensor project_tokens(const Tensor& frozen_tokens, const PromptEncoderParams& pe);

// frozen_forward followed by the trainable projection: (..., m, d_model).
Tensor encode(const Tensor& tokens, const EmbeddingBundle& bundle, const PromptEncoderParams& pe);

// Assembled and frozen-encoded image tokens of image `ref` (before projection).
Tensor frozen_image_tokens(const EmbeddingBundle& bundle, std::uint32_t ref);

// Precomputes the frozen part of the prompt encoder for every image in a
// bundle. The frozen layers are fixed, so this is exact and lets training
// batches apply only the trainable projection.
class FrozenTokenTable : public ImageTokenSource {
 public:
  FrozenTokenTable(const EmbeddingBundle& bundle, const PromptSpec& prompts);

  std::size_t image_count() const override { return count_; }
  std::size_t tokens() const override { return tokens_; }
  std::size_t width() const override { return width_; }
  std::span<const double> image(std::uint32_t ref) const override;

  const std::vector<SemanticChoice>& choices() const { return choices_; }

 private:
  std::size_t count_, tokens_, width_;
  std::vector<double> values_;
  std::vector<SemanticChoice> choices_;
};

}  // namespace elip
