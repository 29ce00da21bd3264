#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "elip/config.hpp"
#include "elip/cross_attention.hpp"
#include "elip/fusion.hpp"
#include "elip/model_eeg.hpp"
#include "elip/params.hpp"
#include "elip/prompt_encoder.hpp"

namespace elip {

struct ForwardResult {
  FuseOutput fused;
  Tensor eeg_logits;
  Tensor cls_logits;
};

// The complete trainable model. Frozen image-side work happens upstream in
// FrozenTokenTable; forward() consumes its (B, m, d_clip) output.
class ElipFormer {
 public:
  ElipFormer(const ModelConfig& cfg, std::size_t d_clip, std::uint64_t seed);
  // Parameter handles alias the store, so copies would share storage.
  ElipFormer(const ElipFormer&) = delete;
  ElipFormer& operator=(const ElipFormer&) = delete;
  ElipFormer(ElipFormer&&) = default;
  ElipFormer& operator=(ElipFormer&&) = default;

  const ModelConfig& config() const { return cfg_; }
  std::size_t d_clip() const { return d_clip_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  const FeatureExtractorParams& feature_extractor() const { return fe_; }
  const PromptEncoderParams& prompt_encoder() const { return pe_; }
  const CrossBiAttnParams& cross() const { return cba_; }
  const FusionParams& fusion() const { return fusion_; }

  // eeg: (B, C, T); image_tokens: (B, m, d_clip) frozen tokens.
  ForwardResult forward(const Tensor& eeg, const Tensor& image_tokens) const;
  // Stage-1 path without the cross stack: feature_extract -> fusion EEG side.
  Tensor eeg_path_logits(const Tensor& eeg) const;
  Tensor eeg_path_feature(const Tensor& eeg) const;

  // Parameters trained in stage 1 (fe, fusion encoder/conv, EEG head).
  std::vector<std::string> stage1_names() const;
  std::vector<std::string> all_names() const { return store_.names(); }

  std::map<std::string, std::string> metadata() const;

  void save(const std::filesystem::path& path, std::map<std::string, std::string> extra = {}) const;
  // Rebuilds the architecture from checkpoint metadata, then loads values.
  static ElipFormer load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  std::size_t d_clip_;
  ParamStore store_;
  FeatureExtractorParams fe_;
  PromptEncoderParams pe_;
  CrossBiAttnParams cba_;
  FusionParams fusion_;
};

}  // namespace elip
