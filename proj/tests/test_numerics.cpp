#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "elip/error.hpp"
#include "elip/gradcheck.hpp"
#include "elip/optim.hpp"
#include "elip/params.hpp"
#include "elip/tensor.hpp"
#include "test_util.hpp"

using namespace elip;
using testutil::randn;

TEST_CASE("backward of x*x at 3 is 6") {
  Tensor x = Tensor::scalar(3.0, true);
  backward(x * x);
  REQUIRE(x.grad().size() == 1);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("gradient of sum(softmax_rows) vanishes") {
  std::mt19937_64 rng(11);
  Tensor x = randn(rng, {5, 7}, 3.0, true);
  backward(sum(softmax_rows(x)));
  for (double g : x.grad()) CHECK(std::abs(g) < 1e-14);
}

TEST_CASE("backward rejects non-scalar and untracked losses") {
  Tensor x = Tensor::full({2, 2}, 1.0, true);
  CHECK_THROWS_AS(backward(x * x), ShapeError);
  Tensor c = Tensor::scalar(2.0);
  CHECK_THROWS_AS(backward(c * c), Error);
}

TEST_CASE("a tensor used twice accumulates both gradients") {
  std::mt19937_64 rng(3);
  Tensor x = randn(rng, {3, 4}, 1.0, true);
  Tensor w1 = randn(rng, {4, 2}), w2 = randn(rng, {4, 2});

  backward(sum(matmul(x, w1)) + sum(gelu(matmul(x, w2))));
  std::vector<double> both(x.grad().begin(), x.grad().end());

  x.zero_grad();
  backward(sum(matmul(x, w1)));
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(sum(gelu(matmul(x, w2))));
  for (std::size_t i = 0; i < both.size(); ++i) CHECK(both[i] == doctest::Approx(g1[i] + x.grad()[i]).epsilon(1e-12));
}

TEST_CASE("softmax_rows examples") {
  auto a = softmax_rows(Tensor({1, 2}, {0.0, 0.0}));
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);

  auto b = softmax_rows(Tensor({3, 1}, {-4.0, 0.0, 9.0}));
  for (double v : b.data()) CHECK(v == 1.0);

  auto c = softmax_rows(Tensor({1, 2}, {std::log(1.0), std::log(3.0)}));
  CHECK(c[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(c[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("softmax_rows is invariant to per-row shifts") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor m = randn(rng, {6, 9}, 4.0);
    std::vector<double> shifted(m.data().begin(), m.data().end());
    for (std::size_t r = 0; r < 6; ++r) {
      const double c = shift(rng);
      for (std::size_t k = 0; k < 9; ++k) shifted[r * 9 + k] += c;
    }
    auto a = softmax_rows(m), b = softmax_rows(Tensor({6, 9}, shifted));
    CHECK(testutil::max_abs_diff(a.data(), b.data()) < 1e-12);
  }
}

TEST_CASE("layer_norm examples") {
  Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
  auto y = layer_norm(Tensor({1, 2}, {1.0, 3.0}), g, b);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-5));

  Tensor g4 = Tensor::full({4}, 1.0), b4 = Tensor::zeros({4});
  auto z = layer_norm(Tensor::full({2, 4}, 7.5), g4, b4);
  for (double v : z.data()) CHECK(v == 0.0);

  std::mt19937_64 rng(9);
  Tensor x = randn(rng, {50, 128}, 3.0);
  auto out = layer_norm(add_scalar(x, 4.0), Tensor::full({128}, 1.0), Tensor::zeros({128}));
  for (std::size_t r = 0; r < 50; ++r) {
    double mu = 0, var = 0;
    for (std::size_t k = 0; k < 128; ++k) mu += out[r * 128 + k];
    mu /= 128;
    for (std::size_t k = 0; k < 128; ++k) var += (out[r * 128 + k] - mu) * (out[r * 128 + k] - mu);
    var /= 128;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("gelu examples") {
  auto y = gelu(Tensor({3}, {0.0, 1.0, 10.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.841345).epsilon(1e-6));
  CHECK(std::abs(y[2] - 10.0) < 1e-6);
}

TEST_CASE("non-finite results raise NumericError") {
  Tensor a = Tensor::full({2}, 1.0), z = Tensor::zeros({2});
  CHECK_THROWS_AS(div(a, z), NumericError);
  CHECK_THROWS_AS(Tensor::full({2}, 1e300) * Tensor::full({2}, 1e300), NumericError);
}

TEST_CASE("broadcasting and shape errors") {
  Tensor a = Tensor::full({2, 3}, 1.0), b = Tensor({3}, {1.0, 2.0, 3.0});
  auto c = a + b;
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c[5] == 4.0);
  CHECK_THROWS_AS(a + Tensor::zeros({2}), ShapeError);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  Tensor x = Tensor::full({2}, 2.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE((x * x).requires_grad());
  }
  CHECK((x * x).requires_grad());
}

TEST_CASE("primitive gradient suite, a few seeds") {
  auto rep = gradcheck::primitive_suite(3);
  CHECK(rep.ok());
  CHECK(rep.worst() < 1e-4);
  CHECK(rep.results.size() > 40);
}

TEST_CASE("gradcheck flags a wrong gradient") {
  // A loss whose recorded graph ignores a dependency on w.
  Tensor w = Tensor::full({3}, 0.5);
  auto f = [&] {
    Tensor frozen = w.detach();
    return sum(mul(mul(w, w), add_scalar(frozen, 1.0)));
  };
  auto res = gradcheck::check(f, {{"w", w}});
  CHECK_FALSE(res.at(0).ok);
}

TEST_CASE("adam: zero gradient without decay is the identity") {
  std::vector<double> p = {1.0, -2.0, 0.25};
  const std::vector<double> g(3, 0.0);
  AdamMoments m{std::vector<double>(3, 0.0), std::vector<double>(3, 0.0)};
  AdamState s;
  for (long k = 1; k <= 5; ++k) {
    s.step = k;
    adam_update(p, g, m, s, true);
  }
  CHECK(p == std::vector<double>{1.0, -2.0, 0.25});
}

TEST_CASE("adam: first step moves by about lr") {
  std::vector<double> p = {0.0};
  const std::vector<double> g = {0.5};
  AdamMoments m{{0.0}, {0.0}};
  AdamState s;
  s.step = 1;
  adam_update(p, g, m, s, false);
  CHECK(p[0] == doctest::Approx(-0.001 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(-0.001).epsilon(1e-6));
}

TEST_CASE("adam: decoupled weight decay only") {
  std::vector<double> p = {1.0};
  AdamMoments m{{0.0}, {0.0}};
  AdamState s;
  s.weight_decay = 0.01;
  s.step = 1;
  adam_update(p, std::vector<double>{0.0}, m, s, true);
  CHECK(p[0] == doctest::Approx(0.99999).epsilon(1e-15));
}

TEST_CASE("adam: shape mismatch raises") {
  std::vector<double> p = {1.0, 2.0};
  AdamMoments m{{0.0, 0.0}, {0.0, 0.0}};
  AdamState s;
  s.step = 1;
  CHECK_THROWS_AS(adam_update(p, std::vector<double>{0.0}, m, s, false), ShapeError);
}

TEST_CASE("Adam decays weights but not biases, gains or positional tables") {
  ParamStore store(1);
  Tensor w = store.weight("a.W", 3, 3);
  Tensor b = store.bias("a.b", 3);
  Tensor g = store.gain("a.g", 3);
  Tensor p = store.positional("a.pos", 2, 3);
  for (double& v : b.mutable_data()) v = 1.0;
  const std::vector<double> w0(w.data().begin(), w.data().end()), p0(p.data().begin(), p.data().end());

  AdamState s;
  s.weight_decay = 0.5;
  Adam opt(store, store.names(), s);
  opt.step();
  for (std::size_t i = 0; i < w0.size(); ++i) CHECK(w[i] == doctest::Approx(w0[i] * (1.0 - 0.001 * 0.5)).epsilon(1e-15));
  for (double v : b.data()) CHECK(v == 1.0);
  for (double v : g.data()) CHECK(v == 1.0);
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p[i] == p0[i]);
}

TEST_CASE("Adam only touches the named subset") {
  ParamStore store(2);
  Tensor a = store.weight("x.W", 2, 2), c = store.weight("y.W", 2, 2);
  const std::vector<double> c0(c.data().begin(), c.data().end());
  backward(sum(mul(matmul(a, c), matmul(a, c))));
  Adam opt(store, store.names({"x."}), AdamState{});
  opt.step();
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == c0);
}

TEST_CASE("parameter initialisation") {
  ParamStore store(4);
  Tensor w = store.weight("w", 100, 60);
  const double bound = std::sqrt(6.0 / 160.0);
  for (double v : w.data()) CHECK(std::abs(v) <= bound);
  for (double v : store.bias("b", 5).data()) CHECK(v == 0.0);
  for (double v : store.gain("g", 5).data()) CHECK(v == 1.0);
  CHECK_THROWS_AS(store.bias("b", 5), ConfigError);
  CHECK(store.names() == std::vector<std::string>{"b", "g", "w"});
}

TEST_CASE("checkpoint round-trip") {
  testutil::TempDir dir("ckpt");
  ParamStore store(8);
  store.weight("z.W", 4, 3);
  store.bias("a.b", 3);
  store.positional("m.pos", 2, 5);
  store.round_to_float32();
  save_checkpoint(dir / "m.elipw", store, {{"note", "hello"}});

  Checkpoint ck = read_checkpoint(dir / "m.elipw");
  CHECK(ck.metadata.at("note") == "hello");
  std::vector<std::string> order;
  for (const auto& [name, t] : ck.tensors) order.push_back(name);
  CHECK(order == std::vector<std::string>{"a.b", "m.pos", "z.W"});

  ParamStore other(99);
  other.weight("z.W", 4, 3);
  other.bias("a.b", 3);
  other.positional("m.pos", 2, 5);
  load_checkpoint(dir / "m.elipw", other);
  for (const auto& name : store.names()) {
    const auto a = store.get(name).data(), b = other.get(name).data();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST_CASE("checkpoint errors") {
  testutil::TempDir dir("ckpt_err");
  ParamStore store(8);
  store.weight("w", 8, 8);
  save_checkpoint(dir / "ok.elipw", store);

  {
    std::ofstream f(dir / "bad.elipw", std::ios::binary);
    f << "NOTELIP\nend\n";
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.elipw"), FormatError);

  std::ifstream in(dir / "ok.elipw", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  {
    std::ofstream f(dir / "short.elipw", std::ios::binary);
    f << bytes.substr(0, bytes.size() - 9);
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "short.elipw"), TruncationError);

  ParamStore mismatch(1);
  mismatch.weight("w", 8, 4);
  CHECK_THROWS_AS(load_checkpoint(dir / "ok.elipw", mismatch), ShapeError);
}
