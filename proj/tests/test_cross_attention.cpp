#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "attention_oracle.hpp"
#include "elip/cross_attention.hpp"
#include "elip/gradcheck.hpp"
#include "elip/params.hpp"
#include "test_util.hpp"

using namespace elip;
using testutil::randn;

namespace {

ModelConfig cfg_for(std::size_t d, std::size_t h) {
  ModelConfig cfg;
  cfg.d_model = d;
  cfg.heads = h;
  return cfg;
}

HeadParams random_head(std::mt19937_64& rng, std::size_t d, std::size_t dh) {
  return {randn(rng, {d, dh}, 0.7), randn(rng, {d, dh}, 0.7), randn(rng, {d, dh}, 0.7)};
}

Tensor broadcast_row(const Tensor& row, std::size_t n) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) v.insert(v.end(), row.data().begin(), row.data().end());
  return Tensor({n, row.size(1)}, v);
}

}  // namespace

TEST_CASE("row and column paths match the scalar loops") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(1, 9);
  int unequal = 0;
  for (int inst = 0; inst < 60; ++inst) {
    const std::size_t nx = len(rng), ny = len(rng), d = 8, dh = 3;
    unequal += nx != ny;
    Tensor x = randn(rng, {nx, d}), y = randn(rng, {ny, d});
    HeadParams h = random_head(rng, d, dh);
    for (bool scale : {true, false}) {
      CHECK(oracle::max_diff(oracle::row_weights(x, y, h, scale), row_weights(x, y, h, scale)) < 1e-12);
      CHECK(oracle::max_diff(oracle::row_attend(x, y, h, scale), row_attend(x, y, h, scale)) < 1e-12);
      const auto ref = oracle::col_attend(x, y, h, scale);
      const auto got = col_attend_detail(x, y, h, scale);
      CHECK(oracle::max_diff(ref.assignment, got.assignment) < 1e-12);
      CHECK(oracle::max_diff(ref.out, got.out) < 1e-12);
      const double total = std::accumulate(got.mass.data().begin(), got.mass.data().end(), 0.0);
      CHECK(std::abs(total - static_cast<double>(ny)) < 1e-12);
    }
  }
  CHECK(unequal > 20);
}

TEST_CASE("row weights sum to one") {
  std::mt19937_64 rng(2);
  for (int inst = 0; inst < 20; ++inst) {
    Tensor x = randn(rng, {5, 6}, 3.0), y = randn(rng, {7, 6}, 3.0);
    Tensor a = row_weights(x, y, random_head(rng, 6, 2), true);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += a[i * 7 + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("single key: row path is query projection plus the value") {
  std::mt19937_64 rng(3);
  Tensor x = randn(rng, {4, 6}), y = randn(rng, {1, 6});
  HeadParams h = random_head(rng, 6, 3);
  Tensor expect = matmul(x, h.wq) + broadcast_row(matmul(y, h.wv), 4);
  CHECK(testutil::max_abs_diff(row_attend(x, y, h, true).data(), expect.data()) < 1e-12);

  HeadParams zero_v = h;
  zero_v.wv = Tensor::zeros({6, 3});
  Tensor y5 = randn(rng, {5, 6});
  CHECK(testutil::max_abs_diff(row_attend(x, y5, zero_v, true).data(), matmul(x, h.wq).data()) < 1e-12);
}

TEST_CASE("single query: column path takes all the mass") {
  std::mt19937_64 rng(4);
  const std::size_t ny = 6;
  Tensor x = randn(rng, {1, 5}), y = randn(rng, {ny, 5});
  HeadParams h = random_head(rng, 5, 2);
  auto c = col_attend_detail(x, y, h, true);
  for (double a : c.assignment.data()) CHECK(a == 1.0);
  CHECK(std::abs(c.mass[0] - static_cast<double>(ny)) < 1e-12);
  Tensor v = matmul(y, h.wv), q = matmul(x, h.wq);
  for (std::size_t k = 0; k < 2; ++k) {
    double m = 0;
    for (std::size_t j = 0; j < ny; ++j) m += v[j * 2 + k];
    CHECK(std::abs(c.out[k] - (q[k] + m / static_cast<double>(ny))) < 1e-12);
  }
}

TEST_CASE("one token on each side: both paths coincide") {
  ParamStore store(5);
  const ModelConfig cfg = cfg_for(8, 2);
  auto dir = LayerParams::make(store, "d", cfg);
  std::mt19937_64 rng(6);
  Tensor x = randn(rng, {1, 8}), y = randn(rng, {1, 8});
  std::vector<Tensor> heads;
  for (const auto& h : dir.heads) heads.push_back(scale(matmul(x, h.wq) + matmul(y, h.wv), 2.0));
  Tensor expect = matmul(concat_heads(heads), dir.wo) + dir.bo;
  CHECK(testutil::max_abs_diff(bi_attend(x, y, dir, AttnOptions{}).data(), expect.data()) < 1e-12);
}

TEST_CASE("disabling the column path gives plain cross-attention") {
  ParamStore store(7);
  const ModelConfig cfg = cfg_for(8, 2);
  auto dir = LayerParams::make(store, "d", cfg);
  std::mt19937_64 rng(8);
  Tensor x = randn(rng, {4, 8}), y = randn(rng, {6, 8});
  std::vector<Tensor> heads;
  for (const auto& h : dir.heads) heads.push_back(row_attend(x, y, h, true));
  Tensor expect = matmul(concat_heads(heads), dir.wo) + dir.bo;
  CHECK(testutil::max_abs_diff(bi_attend(x, y, dir, AttnOptions{true, false}).data(), expect.data()) == 0.0);
}

TEST_CASE("gradients through bi_attend and the cross module") {
  ParamStore store(9);
  ModelConfig cfg = cfg_for(8, 2);
  cfg.n_cross = 2;
  auto p = CrossBiAttnParams::make(store, cfg);
  std::mt19937_64 rng(10);
  Tensor x = randn(rng, {2, 5, 8}), y = randn(rng, {2, 3, 8}), r = randn(rng, {2, 5, 8});
  auto res = gradcheck::check([&] { return sum(mul(bi_attend(x, y, p.layers[0].eeg, AttnOptions{}), r)); },
                              {{"x", x}, {"y", y}, {"Wq", p.layers[0].eeg.heads[0].wq}, {"Wk", p.layers[0].eeg.heads[1].wk}});
  for (const auto& e : res) {
    INFO(e.name);
    CHECK(e.rel_error < 1e-4);
  }
  Tensor ry = randn(rng, {2, 3, 8});
  auto res2 = gradcheck::check(
      [&] {
        auto [xo, yo] = cross_module(x, y, p, AttnOptions{});
        return sum(mul(xo, r)) + sum(mul(yo, ry));
      },
      {{"x", x}, {"y", y}, {"L1.img.Wv", p.layers[1].img.heads[0].wv}, {"L0.eeg.ffn.W1", p.layers[0].eeg.ffn_w1}});
  for (const auto& e : res2) {
    INFO(e.name);
    CHECK(e.rel_error < 1e-4);
  }
}

TEST_CASE("layer shapes with unequal lengths") {
  ParamStore store(11);
  const ModelConfig cfg = ModelConfig::paper();
  auto p = CrossBiAttnParams::make(store, cfg);
  std::mt19937_64 rng(12);
  auto [a, b] = mhcba_layer(randn(rng, {50, 128}), randn(rng, {50, 128}), p.layers[0], AttnOptions{});
  CHECK(a.shape() == Shape{50, 128});
  CHECK(b.shape() == Shape{50, 128});
  auto [c, d] = mhcba_layer(randn(rng, {50, 128}), randn(rng, {10, 128}), p.layers[0], AttnOptions{});
  CHECK(c.shape() == Shape{50, 128});
  CHECK(d.shape() == Shape{10, 128});
}

TEST_CASE("zero cross weights: no leakage between modalities") {
  ParamStore store(13);
  const ModelConfig cfg = cfg_for(8, 2);
  auto p = CrossBiAttnParams::make(store, cfg);
  auto& L = p.layers[0];
  for (auto* dir : {&L.eeg, &L.img}) {
    for (auto& h : dir->heads) {
      for (Tensor* t : {&h.wq, &h.wk, &h.wv}) {
        for (double& v : t->mutable_data()) v = 0.0;
      }
    }
  }
  std::mt19937_64 rng(14);
  Tensor x = randn(rng, {4, 8}), y1 = randn(rng, {3, 8}), y2 = randn(rng, {6, 8}, 5.0);
  auto [a, ya] = mhcba_layer(x, y1, L, AttnOptions{});
  auto [b, yb] = mhcba_layer(x, y2, L, AttnOptions{});
  CHECK(testutil::max_abs_diff(a.data(), b.data()) == 0.0);
  Tensor ffn_only = layer_tail(x, Tensor::zeros({4, 8}) + L.eeg.bo, L.eeg);
  CHECK(testutil::max_abs_diff(a.data(), ffn_only.data()) < 1e-12);
}

TEST_CASE("a one-layer stack equals a single layer and is deterministic") {
  ParamStore store(15);
  ModelConfig cfg = cfg_for(8, 2);
  cfg.n_cross = 1;
  auto p = CrossBiAttnParams::make(store, cfg);
  std::mt19937_64 rng(16);
  Tensor x = randn(rng, {2, 5, 8}), y = randn(rng, {2, 3, 8});
  auto [a, b] = cross_module(x, y, p, AttnOptions{});
  auto [c, d] = mhcba_layer(x, y, p.layers[0], AttnOptions{});
  auto [e, f] = cross_module(x, y, p, AttnOptions{});
  CHECK(testutil::max_abs_diff(a.data(), c.data()) == 0.0);
  CHECK(testutil::max_abs_diff(b.data(), d.data()) == 0.0);
  CHECK(testutil::max_abs_diff(a.data(), e.data()) == 0.0);
  CHECK(testutil::max_abs_diff(b.data(), f.data()) == 0.0);
}

TEST_CASE("a constant shift of every key token leaves row weights unchanged") {
  std::mt19937_64 rng(17);
  const std::size_t d = 6, dh = 2;
  for (int inst = 0; inst < 10; ++inst) {
    Tensor x = randn(rng, {4, d}), y = randn(rng, {5, d});
    HeadParams h = random_head(rng, d, dh);
    Tensor ys = y + randn(rng, {d}, 2.0);
    Tensor l1 = matmul(matmul(x, h.wq), transpose(matmul(y, h.wk)));
    Tensor l2 = matmul(matmul(x, h.wq), transpose(matmul(ys, h.wk)));
    for (std::size_t i = 0; i < 4; ++i) {
      const double delta = l2[i * 5] - l1[i * 5];
      for (std::size_t j = 1; j < 5; ++j) CHECK(std::abs(l2[i * 5 + j] - l1[i * 5 + j] - delta) < 1e-12);
    }
    Tensor a = row_weights(x, y, h, true), b = row_weights(x, ys, h, true);
    CHECK(testutil::max_abs_diff(a.data(), b.data()) < 1e-12);
  }
}
