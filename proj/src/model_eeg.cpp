#include "elip/model_eeg.hpp"

#include <cmath>

#include "elip/error.hpp"

namespace elip {

LayerParams LayerParams::make(ParamStore& store, const std::string& prefix, const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, dh = cfg.d_head(), hid = cfg.ffn_hidden();
  LayerParams p;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    p.heads.push_back({store.weight(hp + ".Wq", d, dh), store.weight(hp + ".Wk", d, dh),
                       store.weight(hp + ".Wv", d, dh)});
  }
  p.wo = store.weight(prefix + ".Wo", d, d);
  p.bo = store.bias(prefix + ".bo", d);
  p.ln1_gain = store.gain(prefix + ".ln1.gain", d);
  p.ln1_bias = store.bias(prefix + ".ln1.bias", d);
  p.ffn_w1 = store.weight(prefix + ".ffn.W1", d, hid);
  p.ffn_b1 = store.bias(prefix + ".ffn.b1", hid);
  p.ffn_w2 = store.weight(prefix + ".ffn.W2", hid, d);
  p.ffn_b2 = store.bias(prefix + ".ffn.b2", d);
  p.ln2_gain = store.gain(prefix + ".ln2.gain", d);
  p.ln2_bias = store.bias(prefix + ".ln2.bias", d);
  return p;
}

FeatureExtractorParams FeatureExtractorParams::make(ParamStore& store, const ModelConfig& cfg) {
  cfg.validate();
  FeatureExtractorParams fe;
  fe.w = store.weight("fe.W", cfg.channels * cfg.slice_len, cfg.d_model);
  fe.wpos = store.positional("fe.Wpos", cfg.n_slices(), cfg.d_model);
  fe.enc = LayerParams::make(store, "fe.enc", cfg);
  return fe;
}

Tensor slice_embed(const Tensor& eeg, const FeatureExtractorParams& fe, const ModelConfig& cfg) {
  if (eeg.rank() != 3 || eeg.size(1) * cfg.slice_len != fe.w.size(0)) {
    throw ShapeError("slice_embed: input " + shape_str(eeg.shape()) + " does not match W " +
                     shape_str(fe.w.shape()) + " with t=" + std::to_string(cfg.slice_len));
  }
  return matmul(slice_tokens(eeg, cfg.slice_len), fe.w) + fe.wpos;
}

Tensor concat_heads(const std::vector<Tensor>& heads) {
  Tensor out = heads.at(0);
  for (std::size_t h = 1; h < heads.size(); ++h) out = concat_last(out, heads[h]);
  return out;
}

Tensor self_attention(const Tensor& x, const LayerParams& layer) {
  std::vector<Tensor> outs;
  for (const auto& h : layer.heads) {
    const double s = 1.0 / std::sqrt(static_cast<double>(h.wq.size(1)));
    Tensor q = matmul(x, h.wq), k = matmul(x, h.wk), v = matmul(x, h.wv);
    Tensor a = softmax_rows(scale(matmul(q, transpose(k)), s));
    outs.push_back(matmul(a, v));
  }
  return matmul(concat_heads(outs), layer.wo) + layer.bo;
}

Tensor layer_tail(const Tensor& x, const Tensor& attn, const LayerParams& layer) {
  Tensor u = layer_norm(x + attn, layer.ln1_gain, layer.ln1_bias);
  Tensor f = matmul(gelu(matmul(u, layer.ffn_w1) + layer.ffn_b1), layer.ffn_w2) + layer.ffn_b2;
  Tensor v = layer_norm(u + f, layer.ln2_gain, layer.ln2_bias);
  return x + v;
}

Tensor encoder_layer(const Tensor& x, const LayerParams& layer) {
  return layer_tail(x, self_attention(x, layer), layer);
}

Tensor feature_extract(const Tensor& eeg, const FeatureExtractorParams& fe, const ModelConfig& cfg) {
  return encoder_layer(slice_embed(eeg, fe, cfg), fe.enc);
}

}  // namespace elip
