#include "elip/model.hpp"

#include "elip/error.hpp"

namespace elip {

ElipFormer::ElipFormer(const ModelConfig& cfg, std::size_t d_clip, std::uint64_t seed)
    : cfg_(cfg), d_clip_(d_clip), store_(seed) {
  cfg_.validate();
  if (d_clip_ == 0) throw ConfigError("d_clip must be positive");
  fe_ = FeatureExtractorParams::make(store_, cfg_);
  pe_ = PromptEncoderParams::make(store_, d_clip_, cfg_);
  cba_ = CrossBiAttnParams::make(store_, cfg_);
  fusion_ = FusionParams::make(store_, cfg_);
}

ForwardResult ElipFormer::forward(const Tensor& eeg, const Tensor& image_tokens) const {
  if (image_tokens.rank() != 3 || image_tokens.size(2) != d_clip_ || image_tokens.size(0) != eeg.size(0)) {
    throw ShapeError("forward: image tokens " + shape_str(image_tokens.shape()) + " for eeg batch " +
                     shape_str(eeg.shape()) + " and d_clip " + std::to_string(d_clip_));
  }
  Tensor x = feature_extract(eeg, fe_, cfg_);
  Tensor y = project_tokens(image_tokens, pe_);
  auto [xc, yc] = cross_module(x, y, cba_, AttnOptions::from(cfg_));
  ForwardResult r;
  r.fused = fuse(xc, yc, fusion_);
  r.eeg_logits = eeg_logits(r.fused.x_eeg, fusion_);
  r.cls_logits = cls_logits(r.fused.x_f, fusion_);
  return r;
}

Tensor ElipFormer::eeg_path_feature(const Tensor& eeg) const {
  return eeg_global_feature(feature_extract(eeg, fe_, cfg_), fusion_);
}

Tensor ElipFormer::eeg_path_logits(const Tensor& eeg) const { return eeg_logits(eeg_path_feature(eeg), fusion_); }

std::vector<std::string> ElipFormer::stage1_names() const {
  return store_.names({"fe.", "fusion.enc.", "fusion.conv.", "head.eeg."});
}

std::map<std::string, std::string> ElipFormer::metadata() const {
  auto m = model_to_metadata(cfg_);
  m["d_clip"] = std::to_string(d_clip_);
  return m;
}

void ElipFormer::save(const std::filesystem::path& path, std::map<std::string, std::string> extra) const {
  auto meta = metadata();
  meta.insert(extra.begin(), extra.end());
  save_checkpoint(path, store_, meta);
}

ElipFormer ElipFormer::load(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  auto it = ck.metadata.find("d_clip");
  if (it == ck.metadata.end()) throw FormatError(path.string() + ": checkpoint metadata lacks d_clip");
  ElipFormer model(model_from_metadata(ck.metadata), std::stoull(it->second), 0);
  load_checkpoint(path, model.store_);
  return model;
}

}  // namespace elip
