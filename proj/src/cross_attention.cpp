#include "elip/cross_attention.hpp"

#include <algorithm>
#include <cmath>

#include "elip/log.hpp"

namespace elip {

namespace {

constexpr double kMassFloor = 1e-12;

double head_scale(const HeadParams& h, bool on) {
  return on ? 1.0 / std::sqrt(static_cast<double>(h.wq.size(1))) : 1.0;
}

}  // namespace

CrossBiAttnParams CrossBiAttnParams::make(ParamStore& store, const ModelConfig& cfg) {
  CrossBiAttnParams p;
  for (std::size_t i = 0; i < cfg.n_cross; ++i) {
    const std::string prefix = "cba.L" + std::to_string(i);
    p.layers.push_back({LayerParams::make(store, prefix + ".eeg", cfg), LayerParams::make(store, prefix + ".img", cfg)});
  }
  return p;
}

Tensor row_weights(const Tensor& x, const Tensor& y, const HeadParams& head, bool scale_on) {
  Tensor q = matmul(x, head.wq), k = matmul(y, head.wk);
  return softmax_rows(scale(matmul(q, transpose(k)), head_scale(head, scale_on)));
}

Tensor row_attend(const Tensor& x, const Tensor& y, const HeadParams& head, bool scale_on) {
  return matmul(x, head.wq) + matmul(row_weights(x, y, head, scale_on), matmul(y, head.wv));
}

ColumnAttention col_attend_detail(const Tensor& x, const Tensor& y, const HeadParams& head, bool scale_on) {
  Tensor q = matmul(x, head.wq), k = matmul(y, head.wk), v = matmul(y, head.wv);
  ColumnAttention c;
  c.assignment = softmax_rows(scale(matmul(k, transpose(q)), head_scale(head, scale_on)));
  Tensor at = transpose(c.assignment);
  c.mass = sum_last(at, true);
  const auto m = c.mass.data();
  if (std::any_of(m.begin(), m.end(), [](double n) { return n < kMassFloor; })) {
    log::warn("col_attend: a query received vanishing mass; clamped to 1e-12");
  }
  c.out = q + matmul(div(at, clamp_min(c.mass, kMassFloor)), v);
  return c;
}

Tensor col_attend(const Tensor& x, const Tensor& y, const HeadParams& head, bool scale_on) {
  return col_attend_detail(x, y, head, scale_on).out;
}

Tensor bi_attend(const Tensor& x, const Tensor& y, const LayerParams& dir, const AttnOptions& opt) {
  std::vector<Tensor> outs;
  for (const auto& h : dir.heads) {
    Tensor r = row_attend(x, y, h, opt.scale);
    outs.push_back(opt.col_path ? r + col_attend(x, y, h, opt.scale) : r);
  }
  return matmul(concat_heads(outs), dir.wo) + dir.bo;
}

std::pair<Tensor, Tensor> mhcba_layer(const Tensor& x_eeg, const Tensor& y_li, const CrossLayerParams& p,
                                      const AttnOptions& opt) {
  Tensor x_new = layer_tail(x_eeg, bi_attend(x_eeg, y_li, p.eeg, opt), p.eeg);
  Tensor y_new = layer_tail(y_li, bi_attend(y_li, x_eeg, p.img, opt), p.img);
  return {x_new, y_new};
}

std::pair<Tensor, Tensor> cross_module(const Tensor& x_eeg, const Tensor& y_li, const CrossBiAttnParams& p,
                                       const AttnOptions& opt) {
  std::pair<Tensor, Tensor> s{x_eeg, y_li};
  for (const auto& layer : p.layers) s = mhcba_layer(s.first, s.second, layer, opt);
  return s;
}

}  // namespace elip
