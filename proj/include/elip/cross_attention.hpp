#pragma once

#include <utility>
#include <vector>

#include "elip/config.hpp"
#include "elip/model_eeg.hpp"

namespace elip {

struct AttnOptions {
  bool scale = true;     // 1/sqrt(d_head) on both paths
  bool col_path = true;  // false gives plain cross-attention

  static AttnOptions from(const ModelConfig& cfg) { return {cfg.attn_scale, cfg.col_path}; }
};

// One cross bi-attention layer: "eeg" updates EEG tokens with image tokens as
// keys/values, "img" the reverse. Names "cba.L{i}.eeg.*" / "cba.L{i}.img.*".
struct CrossLayerParams {
  LayerParams eeg;
  LayerParams img;
};

struct CrossBiAttnParams {
  std::vector<CrossLayerParams> layers;

  static CrossBiAttnParams make(ParamStore& store, const ModelConfig& cfg);
};

// Row path: softmax over keys for every query.
// X: (..., n_x, d), Y: (..., n_y, d) -> (..., n_x, d_head).
Tensor row_weights(const Tensor& x, const Tensor& y, const HeadParams& head, bool scale);
Tensor row_attend(const Tensor& x, const Tensor& y, const HeadParams& head, bool scale);

// Column path. assignment: (..., n_y, n_x), each row a softmax over the
// queries; mass: (..., n_x, 1) column sums N_i.
struct ColumnAttention {
  Tensor assignment;
  Tensor mass;
  Tensor out;  // (..., n_x, d_head)
};

ColumnAttention col_attend_detail(const Tensor& x, const Tensor& y, const HeadParams& head, bool scale);
Tensor col_attend(const Tensor& x, const Tensor& y, const HeadParams& head, bool scale);

// Output projection of the per-head sums of the two paths: (..., n_x, d_model).
Tensor bi_attend(const Tensor& x, const Tensor& y, const LayerParams& dir, const AttnOptions& opt);

std::pair<Tensor, Tensor> mhcba_layer(const Tensor& x_eeg, const Tensor& y_li, const CrossLayerParams& p,
                                      const AttnOptions& opt);

std::pair<Tensor, Tensor> cross_module(const Tensor& x_eeg, const Tensor& y_li, const CrossBiAttnParams& p,
                                       const AttnOptions& opt);

}  // namespace elip
