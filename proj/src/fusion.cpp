#include "elip/fusion.hpp"

#include "elip/error.hpp"
#include "elip/log.hpp"

namespace elip {

FusionParams FusionParams::make(ParamStore& store, const ModelConfig& cfg) {
  FusionParams p;
  p.enc = LayerParams::make(store, "fusion.enc", cfg);
  p.conv_kernels = store.conv_kernels("fusion.conv.K", cfg.conv_kernels(), cfg.n_slices(), cfg.conv_width());
  p.conv_bias = store.bias("fusion.conv.b", cfg.conv_kernels());
  p.eeg_w = store.weight("head.eeg.W", cfg.d_model, 2);
  p.eeg_b = store.bias("head.eeg.b", 2);
  p.cls_w = store.weight("head.cls.W", 2 * cfg.d_model, 2);
  p.cls_b = store.bias("head.cls.b", 2);
  return p;
}

Tensor eeg_global_feature(const Tensor& x_tokens, const FusionParams& p) {
  const auto& ks = p.conv_kernels.shape();
  if (x_tokens.rank() != 3 || x_tokens.size(1) != ks[1] || x_tokens.size(2) % ks[2] != 0) {
    throw ShapeError("fusion conv: token map " + shape_str(x_tokens.shape()) + " incompatible with kernels " +
                     shape_str(ks));
  }
  return patch_conv(encoder_layer(x_tokens, p.enc), p.conv_kernels, p.conv_bias);
}

FuseOutput fuse(const Tensor& x_tokens, const Tensor& y_tokens, const FusionParams& p) {
  FuseOutput out;
  out.x_eeg = eeg_global_feature(x_tokens, p);
  out.x_f = concat_last(out.x_eeg, select(y_tokens, 1, 0));
  return out;
}

Tensor eeg_logits(const Tensor& x_eeg, const FusionParams& p) { return matmul(x_eeg, p.eeg_w) + p.eeg_b; }

Tensor cls_logits(const Tensor& x_f, const FusionParams& p) { return matmul(x_f, p.cls_w) + p.cls_b; }

Tensor eeg_loss(const Tensor& x_eeg, std::span<const int> labels, const FusionParams& p) {
  return cross_entropy(eeg_logits(x_eeg, p), labels);
}

Tensor cls_loss(const Tensor& x_f, std::span<const int> labels, const FusionParams& p) {
  return cross_entropy(cls_logits(x_f, p), labels);
}

Tensor triplet_loss(const Tensor& x_f, std::span<const int> labels, double margin) {
  if (x_f.rank() != 2 || x_f.size(0) != labels.size() || labels.empty()) {
    throw ShapeError("triplet_loss: features " + shape_str(x_f.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t B = labels.size();
  std::size_t count[2] = {0, 0};
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError("triplet_loss: labels must be 0 or 1");
    ++count[l];
  }
  if (count[0] == 0 || count[1] == 0) {
    log::warn("triplet_loss: single-class batch, term set to 0");
    return Tensor::scalar(0.0);
  }
  std::vector<double> avg(2 * B, 0.0), same(B * 2, 0.0), other(B * 2, 0.0);
  for (std::size_t j = 0; j < B; ++j) {
    const int c = labels[j];
    avg[static_cast<std::size_t>(c) * B + j] = 1.0 / static_cast<double>(count[c]);
    same[j * 2 + static_cast<std::size_t>(c)] = 1.0;
    other[j * 2 + static_cast<std::size_t>(1 - c)] = 1.0;
  }
  Tensor centers = matmul(Tensor({2, B}, std::move(avg)), x_f);
  Tensor ds = x_f - matmul(Tensor({B, 2}, std::move(same)), centers);
  Tensor dother = x_f - matmul(Tensor({B, 2}, std::move(other)), centers);
  Tensor gap = sum_last(ds * ds) - sum_last(dother * dother);
  return mean(relu(add_scalar(gap, margin)));
}

LossBreakdown overall_loss(const FuseOutput& f, std::span<const int> labels, const FusionParams& p,
                           const LossConfig& cfg) {
  Tensor lc = cls_loss(f.x_f, labels, p);
  Tensor lt = triplet_loss(f.x_f, labels, cfg.margin);
  Tensor le = eeg_loss(f.x_eeg, labels, p);
  LossBreakdown b;
  b.cls = lc.item();
  b.triplet = lt.item();
  b.eeg = le.item();
  b.total = scale(lc, cfg.w_cls) + scale(lt, cfg.w_triplet) + scale(le, cfg.w_eeg);
  return b;
}

}  // namespace elip
