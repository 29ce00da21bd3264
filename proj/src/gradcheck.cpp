#include "elip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "elip/config.hpp"
#include "elip/error.hpp"
#include "elip/fusion.hpp"
#include "elip/model.hpp"

namespace elip::gradcheck {

std::vector<Result> check(const std::function<Tensor()>& loss,
                          const std::vector<std::pair<std::string, Tensor>>& inputs, const Options& options) {
  for (auto [name, t] : inputs) {
    if (!t.is_leaf()) throw Error("gradcheck: input " + name + " is not a leaf");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss());

  std::mt19937_64 rng(options.seed);
  std::vector<Result> results;
  NoGradGuard guard;
  for (auto [name, t] : inputs) {
    const auto g = t.grad();
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords && coords.size() > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    double diff2 = 0, an2 = 0, nu2 = 0;
    auto data = t.mutable_data();
    for (std::size_t c : coords) {
      const double x0 = data[c];
      data[c] = x0 + options.step;
      const double fp = loss().item();
      data[c] = x0 - options.step;
      const double fm = loss().item();
      data[c] = x0;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double analytic = g.empty() ? 0.0 : g[c];
      diff2 += (analytic - numeric) * (analytic - numeric);
      an2 += analytic * analytic;
      nu2 += numeric * numeric;
    }
    Result r;
    r.name = name;
    r.coords = coords.size();
    r.rel_error = std::sqrt(diff2) / std::max({std::sqrt(an2), std::sqrt(nu2), options.norm_floor});
    r.ok = r.rel_error <= options.tolerance;
    results.push_back(r);
  }
  for (auto [name, t] : inputs) t.zero_grad();
  return results;
}

bool SuiteReport::ok() const {
  return std::all_of(results.begin(), results.end(), [](const Result& r) { return r.ok; });
}

double SuiteReport::worst() const {
  double w = 0.0;
  for (const auto& r : results) w = std::max(w, r.rel_error);
  return w;
}

namespace {

Tensor randn(std::mt19937_64& rng, Shape shape, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Random linear read-out so every output coordinate affects the loss differently.
Tensor readout(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

void run(SuiteReport& rep, const std::string& op, const std::function<Tensor()>& f,
         const std::vector<std::pair<std::string, Tensor>>& in, const Options& opt) {
  for (auto r : check(f, in, opt)) {
    r.name = op + ":" + r.name;
    rep.results.push_back(r);
  }
}

}  // namespace

SuiteReport primitive_suite(int seeds, const Options& options) {
  SuiteReport rep;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(options.seed * 7919 + static_cast<std::uint64_t>(s) + 1);
    std::uniform_int_distribution<std::size_t> dim(2, 5);
    Options opt = options;
    opt.seed = options.seed + static_cast<std::uint64_t>(s);
    const std::size_t n = dim(rng), k = dim(rng), m = dim(rng), b = dim(rng);

    {
      Tensor a = randn(rng, {n, k}), w = randn(rng, {k, m}), r = randn(rng, {n, m});
      run(rep, "matmul2d", [&] { return readout(matmul(a, w), r); }, {{"a", a}, {"b", w}}, opt);
    }
    {
      Tensor a = randn(rng, {b, n, k}), w = randn(rng, {b, k, m}), r = randn(rng, {b, n, m});
      run(rep, "matmul_batched", [&] { return readout(matmul(a, w), r); }, {{"a", a}, {"b", w}}, opt);
      Tensor w2 = randn(rng, {k, m});
      run(rep, "matmul_shared", [&] { return readout(matmul(a, w2), r); }, {{"a", a}, {"b", w2}}, opt);
    }
    {
      Tensor x = randn(rng, {b, n, m}, 2.0), r = randn(rng, {b, n, m});
      run(rep, "softmax_rows", [&] { return readout(softmax_rows(x), r); }, {{"x", x}}, opt);
      Tensor g = randn(rng, {m}), bias = randn(rng, {m});
      run(rep, "layer_norm", [&] { return readout(layer_norm(x, g, bias), r); },
          {{"x", x}, {"gain", g}, {"bias", bias}}, opt);
      run(rep, "gelu", [&] { return readout(gelu(x), r); }, {{"x", x}}, opt);
      run(rep, "transpose", [&] { return readout(transpose(x), transpose(r)); }, {{"x", x}}, opt);
      run(rep, "mean", [&] { return mean(mul(x, x)); }, {{"x", x}}, opt);
      Tensor rs = randn(rng, {b, n});
      run(rep, "sum_last", [&] { return readout(sum_last(x), rs); }, {{"x", x}}, opt);
      Tensor y = randn(rng, {b, n, k}), rc = randn(rng, {b, n, m + k});
      run(rep, "concat_last", [&] { return readout(concat_last(x, y), rc); }, {{"x", x}, {"y", y}}, opt);
      Tensor rsel = randn(rng, {b, m});
      run(rep, "select", [&] { return readout(select(x, 1, n - 1), rsel); }, {{"x", x}}, opt);
      Tensor rn = randn(rng, {b, n, 1});
      run(rep, "narrow_last", [&] { return readout(narrow_last(x, m - 1, 1), rn); }, {{"x", x}}, opt);
      Tensor z = randn(rng, {m}), pos = Tensor::full({b, n, m}, 2.0);
      run(rep, "broadcast_mul_div", [&] { return readout(div(mul(x, z), add(pos, mul(z, z))), r); },
          {{"x", x}, {"z", z}}, opt);
    }
    {
      const std::size_t C = dim(rng), t = dim(rng), T = t * dim(rng);
      Tensor sig = randn(rng, {b, C, T}), r = randn(rng, {b, T / t, C * t});
      run(rep, "slice_tokens", [&] { return readout(slice_tokens(sig, t), r); }, {{"signal", sig}}, opt);
    }
    {
      const std::size_t kh = dim(rng), kw = dim(rng), K = dim(rng), H = kh, W = kw * dim(rng);
      Tensor x = randn(rng, {b, H, W}), ker = randn(rng, {K, kh, kw}), bias = randn(rng, {K});
      Tensor r = randn(rng, {b, K * (W / kw)});
      run(rep, "patch_conv", [&] { return readout(patch_conv(x, ker, bias), r); },
          {{"x", x}, {"kernels", ker}, {"bias", bias}}, opt);
    }
    {
      Tensor logits = randn(rng, {n + 2, 2}, 2.0);
      std::vector<int> labels(n + 2);
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>((i + static_cast<std::size_t>(s)) % 2);
      run(rep, "cross_entropy", [&] { return cross_entropy(logits, labels); }, {{"logits", logits}}, opt);
      Tensor feats = randn(rng, {n + 2, m});
      run(rep, "triplet", [&] { return triplet_loss(feats, labels, 0.5); }, {{"x_f", feats}}, opt);
    }
  }
  return rep;
}

SuiteReport model_suite(int seeds, bool desk, const Options& options) {
  ModelConfig cfg;
  std::size_t d_clip = 64, tokens = 10;
  if (desk) {
    cfg = ModelConfig::desk();
  } else {
    cfg.channels = 4;
    cfg.samples = 20;
    cfg.slice_len = 5;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.n_cross = 2;
    d_clip = 8;
    tokens = 3;
  }
  SuiteReport rep;
  for (int s = 0; s < seeds; ++s) {
    Options opt = options;
    opt.seed = options.seed + static_cast<std::uint64_t>(s);
    ElipFormer model(cfg, d_clip, 100 + static_cast<std::uint64_t>(s));
    std::mt19937_64 rng(options.seed * 31 + static_cast<std::uint64_t>(s));
    Tensor eeg = randn(rng, {4, cfg.channels, cfg.samples});
    Tensor img = randn(rng, {4, tokens, d_clip});
    img.set_requires_grad(false);
    const std::vector<int> labels = {0, 1, 1, 0};
    auto f = [&] {
      ForwardResult r = model.forward(eeg, img);
      return overall_loss(r.fused, labels, model.fusion(), LossConfig{}).total;
    };
    std::vector<std::pair<std::string, Tensor>> in;
    for (const auto& [name, e] : model.params().entries()) in.emplace_back(name, e.value);
    in.emplace_back("input.eeg", eeg);
    for (const auto& r : check(f, in, opt)) rep.results.push_back(r);
    eeg.set_requires_grad(false);
  }
  return rep;
}

}  // namespace elip::gradcheck
