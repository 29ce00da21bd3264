#pragma once

#include <span>

#include "elip/config.hpp"
#include "elip/model_eeg.hpp"

namespace elip {

struct FusionParams {
  LayerParams enc;      // "fusion.enc.*"
  Tensor conv_kernels;  // (K, n_s, d_model/8), "fusion.conv.K"
  Tensor conv_bias;     // (K), "fusion.conv.b"
  Tensor eeg_w, eeg_b;  // d_model -> 2, "head.eeg.*"
  Tensor cls_w, cls_b;  // 2 d_model -> 2, "head.cls.*"

  static FusionParams make(ParamStore& store, const ModelConfig& cfg);
};

// encoder_layer, non-overlapping (n_s, d_model/8) convolution, flatten:
// (B, n_s, d_model) -> (B, d_model).
Tensor eeg_global_feature(const Tensor& x_tokens, const FusionParams& p);

struct FuseOutput {
  Tensor x_eeg;  // (B, d_model)
  Tensor x_f;    // (B, 2 d_model)
};

// x_f = concat(x_eeg, Y[:, 0, :]).
FuseOutput fuse(const Tensor& x_tokens, const Tensor& y_tokens, const FusionParams& p);

Tensor eeg_logits(const Tensor& x_eeg, const FusionParams& p);
Tensor cls_logits(const Tensor& x_f, const FusionParams& p);

Tensor eeg_loss(const Tensor& x_eeg, std::span<const int> labels, const FusionParams& p);
Tensor cls_loss(const Tensor& x_f, std::span<const int> labels, const FusionParams& p);

// Mean over the batch of hinge(|x - c_same|^2 - |x - c_other|^2 + margin)
// with batch class centres that include the anchor. A single-class batch
// gives a constant 0 and a warning.
Tensor triplet_loss(const Tensor& x_f, std::span<const int> labels, double margin);

struct LossBreakdown {
  Tensor total;
  double cls = 0.0;
  double triplet = 0.0;
  double eeg = 0.0;
};

LossBreakdown overall_loss(const FuseOutput& f, std::span<const int> labels, const FusionParams& p,
                           const LossConfig& cfg);

}  // namespace elip
