#pragma once

#include <string>
#include <vector>

#include "elip/config.hpp"
#include "elip/params.hpp"
#include "elip/tensor.hpp"

namespace elip {

// Projections of one attention head, each (d_model, d_head).
struct HeadParams {
  Tensor wq, wk, wv;
};

// Attention heads with output projection, followed by the Add-LN / FFN /
// Add-LN tail and the start-to-end skip. Shared by the EEG encoder layer,
// the fusion encoder layer and each direction of a cross bi-attention layer.
struct LayerParams {
  std::vector<HeadParams> heads;
  Tensor wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gain, ln2_bias;

  // Registers "<prefix>.h{k}.Wq|Wk|Wv", "<prefix>.Wo", "<prefix>.bo",
  // "<prefix>.ln1.*", "<prefix>.ffn.*", "<prefix>.ln2.*".
  static LayerParams make(ParamStore& store, const std::string& prefix, const ModelConfig& cfg);
};

struct FeatureExtractorParams {
  Tensor w;     // (C*t, d_model)
  Tensor wpos;  // (n_s, d_model)
  LayerParams enc;

  static FeatureExtractorParams make(ParamStore& store, const ModelConfig& cfg);
};

// (B, C, T) -> (B, n_s, d_model): slices projected by W plus W_pos.
Tensor slice_embed(const Tensor& eeg, const FeatureExtractorParams& fe, const ModelConfig& cfg);

// Per-head scaled dot-product self-attention, concatenated and projected.
Tensor self_attention(const Tensor& x, const LayerParams& layer);

// u = LN(X + attn); v = LN(u + FFN(u)); returns X + v.
Tensor layer_tail(const Tensor& x, const Tensor& attn, const LayerParams& layer);

Tensor encoder_layer(const Tensor& x, const LayerParams& layer);

Tensor feature_extract(const Tensor& eeg, const FeatureExtractorParams& fe, const ModelConfig& cfg);

// Head outputs (..., n, d_head) concatenated along the last axis.
Tensor concat_heads(const std::vector<Tensor>& heads);

}  // namespace elip
