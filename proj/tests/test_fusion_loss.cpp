#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "elip/fusion.hpp"
#include "elip/gradcheck.hpp"
#include "elip/log.hpp"
#include "loss_oracle.hpp"
#include "test_util.hpp"

using namespace elip;
using testutil::randn;

namespace {

Tensor rows(const std::vector<std::vector<double>>& x) { return Tensor({x.size(), x[0].size()}, oracle::flatten(x)); }

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.samples = 20;
  cfg.slice_len = 5;
  cfg.d_model = 16;
  cfg.heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("default fusion geometry") {
  ParamStore store(1);
  const ModelConfig cfg = ModelConfig::paper();
  auto p = FusionParams::make(store, cfg);
  CHECK(p.conv_kernels.shape() == Shape{16, 50, 16});
  std::mt19937_64 rng(2);
  auto f = fuse(randn(rng, {2, 50, 128}), randn(rng, {2, 50, 128}), p);
  CHECK(f.x_eeg.shape() == Shape{2, 128});
  CHECK(f.x_f.shape() == Shape{2, 256});
}

TEST_CASE("zero kernels give the biases, and the class token fills the second half") {
  ParamStore store(3);
  const ModelConfig cfg = tiny();
  auto p = FusionParams::make(store, cfg);
  for (double& v : p.conv_kernels.mutable_data()) v = 0.0;
  auto bias = p.conv_bias.mutable_data();
  for (std::size_t k = 0; k < bias.size(); ++k) bias[k] = 0.1 * static_cast<double>(k + 1);
  std::mt19937_64 rng(4);
  Tensor y = randn(rng, {3, 5, 16});
  auto f = fuse(randn(rng, {3, 4, 16}), y, p);
  const std::size_t K = cfg.conv_kernels(), per = 16 / cfg.conv_width();
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < per; ++j) CHECK(f.x_eeg[b * 16 + k * per + j] == bias[k]);
    }
    for (std::size_t k = 0; k < 16; ++k) CHECK(f.x_f[b * 32 + 16 + k] == y[b * 80 + k]);
  }
}

TEST_CASE("mutating one class-token entry changes exactly one fused entry") {
  ParamStore store(5);
  const ModelConfig cfg = tiny();
  auto p = FusionParams::make(store, cfg);
  std::mt19937_64 rng(6);
  Tensor x = randn(rng, {2, 4, 16}), y = randn(rng, {2, 5, 16});
  auto base = fuse(x, y, p);
  for (std::size_t k : {0, 7, 15}) {
    std::vector<double> v(y.data().begin(), y.data().end());
    v[80 + k] += 1.0;
    auto f = fuse(x, Tensor({2, 5, 16}, v), p);
    for (std::size_t i = 0; i < f.x_f.numel(); ++i) {
      if (i == 32 + 16 + k) {
        CHECK(f.x_f[i] == doctest::Approx(base.x_f[i] + 1.0));
      } else {
        CHECK(f.x_f[i] == base.x_f[i]);
      }
    }
  }
}

TEST_CASE("cross-entropy examples") {
  const std::vector<int> l01 = {0, 1}, l00 = {0, 0};
  CHECK(std::abs(cross_entropy(Tensor::zeros({2, 2}), l01).item() - std::log(2.0)) < 1e-12);
  CHECK(cross_entropy(Tensor({2, 2}, {20, -20, -20, 20}), l01).item() < 1e-8);
  const double s1 = std::exp(1.0) / (std::exp(1.0) + 1.0), s2 = 1.0 / (1.0 + std::exp(1.0));
  const double hand = (-std::log(s1) - std::log(s2)) / 2.0;
  const double got = cross_entropy(Tensor({2, 2}, {1, 0, 0, 1}), l00).item();
  CHECK(std::abs(got - hand) < 1e-12);
  CHECK(got == doctest::Approx(0.8133).epsilon(1e-4));
}

TEST_CASE("both heads share the cross-entropy kernel") {
  ParamStore store(7);
  auto p = FusionParams::make(store, tiny());
  std::mt19937_64 rng(8);
  Tensor xe = randn(rng, {4, 16}), xf = randn(rng, {4, 32});
  const std::vector<int> labels = {0, 1, 1, 0};
  CHECK(eeg_loss(xe, labels, p).item() == cross_entropy(eeg_logits(xe, p), labels).item());
  CHECK(cls_loss(xf, labels, p).item() == cross_entropy(cls_logits(xf, p), labels).item());

  for (double& v : p.cls_w.mutable_data()) v = 0.0;
  for (double& v : p.eeg_w.mutable_data()) v = 0.0;
  CHECK(std::abs(cls_loss(xf, labels, p).item() - std::log(2.0)) < 1e-12);
  CHECK(std::abs(eeg_loss(xe, labels, p).item() - std::log(2.0)) < 1e-12);
}

TEST_CASE("triplet loss: coincident centres give the margin") {
  Tensor x = Tensor::full({6, 3}, 1.25);
  CHECK(std::abs(triplet_loss(x, std::vector<int>{0, 1, 0, 1, 1, 0}, 0.5).item() - 0.5) < 1e-12);
}

TEST_CASE("triplet loss: well separated classes give zero") {
  std::vector<std::vector<double>> x = {{0, 0}, {2, 0}, {10, 0}};
  const std::vector<int> l = {0, 0, 1};
  CHECK(triplet_loss(rows(x), l, 0.5).item() == 0.0);
  CHECK(oracle::triplet(x, l, 0.5) == 0.0);
}

TEST_CASE("triplet loss: hand batch with a close second class") {
  std::vector<std::vector<double>> x = {{0, 0}, {2, 0}, {1.5, 0}};
  const std::vector<int> l = {0, 0, 1};
  // per sample: hinge(1 - 2.25 + .5) = 0, hinge(1 - .25 + .5) = 1.25, hinge(0 - .25 + .5) = .25
  CHECK(std::abs(oracle::triplet(x, l, 0.5) - 0.5) < 1e-12);
  CHECK(std::abs(triplet_loss(rows(x), l, 0.5).item() - 0.5) < 1e-9);
}

TEST_CASE("triplet loss matches the scalar oracle on random batches") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t B = 3 + static_cast<std::size_t>(trial % 7);
    std::vector<std::vector<double>> x(B, std::vector<double>(4));
    std::vector<int> l(B);
    for (std::size_t i = 0; i < B; ++i) {
      l[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng() % 2);
      for (auto& v : x[i]) v = 0.6 * nd(rng) + (l[i] ? 0.5 : 0.0);
    }
    CHECK(std::abs(triplet_loss(rows(x), l, 0.5).item() - oracle::triplet(x, l, 0.5)) < 1e-12);
  }
}

TEST_CASE("triplet loss is permutation and translation invariant") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> x(8, std::vector<double>(5));
  for (auto& r : x) {
    for (auto& v : r) v = 0.4 * nd(rng);
  }
  std::vector<int> l = {0, 1, 0, 1, 1, 0, 0, 1};
  const double base = triplet_loss(rows(x), l, 0.5).item();
  CHECK(base > 0.0);

  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<double>> xp;
  std::vector<int> lp;
  for (std::size_t i : perm) {
    xp.push_back(x[i]);
    lp.push_back(l[i]);
  }
  CHECK(std::abs(triplet_loss(rows(xp), lp, 0.5).item() - base) < 1e-12);

  for (auto& r : x) {
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += 3.0 - static_cast<double>(k);
  }
  CHECK(std::abs(triplet_loss(rows(x), l, 0.5).item() - base) < 1e-12);
}

TEST_CASE("single-class batches drop the triplet term with a warning") {
  ParamStore store(11);
  auto p = FusionParams::make(store, tiny());
  std::mt19937_64 rng(12);
  FuseOutput f{randn(rng, {3, 16}), randn(rng, {3, 32})};
  const std::vector<int> l = {1, 1, 1};
  log::WarningCounter warnings;
  CHECK(triplet_loss(f.x_f, l, 0.5).item() == 0.0);
  CHECK(warnings.count() == 1);
  auto lb = overall_loss(f, l, p, LossConfig{});
  CHECK(lb.triplet == 0.0);
  CHECK(std::abs(lb.total.item() - (lb.cls + lb.eeg)) < 1e-12);
}

TEST_CASE("overall loss sums its parts") {
  ParamStore store(13);
  auto p = FusionParams::make(store, tiny());
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    FuseOutput f{randn(rng, {6, 16}), randn(rng, {6, 32}, 0.3)};
    const std::vector<int> l = {0, 1, 0, 1, 1, 0};
    auto lb = overall_loss(f, l, p, LossConfig{});
    CHECK(std::abs(lb.total.item() - (lb.cls + lb.triplet + lb.eeg)) < 1e-12);
    CHECK(lb.total.item() >= lb.cls);
    CHECK(lb.total.item() >= 0.0);
  }
  CHECK(0.6931 + 0.5 + 0.6931 == doctest::Approx(1.8862));
}

TEST_CASE("gradient through all three loss terms") {
  ParamStore store(15);
  const ModelConfig cfg = tiny();
  auto p = FusionParams::make(store, cfg);
  std::mt19937_64 rng(16);
  Tensor x = randn(rng, {4, 4, 16}), y = randn(rng, {4, 5, 16}, 0.3);
  const std::vector<int> l = {0, 1, 1, 0};
  auto res = gradcheck::check([&] { return overall_loss(fuse(x, y, p), l, p, LossConfig{}).total; },
                              {{"x", x},
                               {"y", y},
                               {"conv.K", p.conv_kernels},
                               {"conv.b", p.conv_bias},
                               {"cls.W", p.cls_w},
                               {"eeg.W", p.eeg_w},
                               {"enc.W1", p.enc.ffn_w1}});
  for (const auto& r : res) {
    INFO(r.name);
    CHECK(r.rel_error < 1e-4);
  }
}
