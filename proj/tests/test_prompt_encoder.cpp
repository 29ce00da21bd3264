#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "elip/error.hpp"
#include "elip/prompt_encoder.hpp"
#include "elip/synthetic.hpp"
#include "test_util.hpp"

using namespace elip;
using testutil::randn;

namespace {

using Vec = std::vector<double>;

EmbeddingBundle desk_bundle(std::vector<int>* labels = nullptr) {
  SyntheticConfig cfg;
  return synth_bundle(cfg, labels);
}

Vec add_vec(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace

TEST_CASE("cosine similarity examples") {
  const Vec a = {1.0, 2.0, -3.0}, b = {3.0, 6.0, -9.0}, o = {2.0, -1.0, 0.0};
  CHECK(cosine_sim(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_sim(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_sim(a, o) == 0.0);
  CHECK_THROWS_AS(cosine_sim(a, Vec(3, 0.0)), NumericError);
  CHECK_THROWS_AS(cosine_sim(a, Vec(2, 1.0)), ShapeError);
}

TEST_CASE("class token selection") {
  const Vec t1 = {1, 0, 0}, t2 = {0, 1, 0};
  const Vec se1 = {10, 20}, se2 = {-5, -7}, cls = {0.5, 0.25};
  CHECK(select_class_token(t1, t1, t2, se1, se2, cls) == add_vec(cls, se1));
  CHECK(select_class_token(t2, t1, t2, se1, se2, cls) == add_vec(cls, se2));
  CHECK(select_class_token(Vec{1, 1, 0}, t1, t2, se1, se2, cls) == cls);
  CHECK(choose_semantic(Vec{1, 1, 5}, t1, t2) == SemanticChoice::None);
  CHECK(choose_semantic(Vec{1, 0.999, 0}, t1, t2) == SemanticChoice::Target);
}

TEST_CASE("assemble tokens") {
  std::mt19937_64 rng(1);
  Tensor patches = randn(rng, {4, 3});
  Tensor pos = randn(rng, {5, 3});
  const Vec cls = {1.0, -2.0, 0.5};
  Tensor y = assemble_tokens(cls, patches, pos);
  CHECK(y.shape() == Shape{5, 3});
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(y[k] - pos[k] - cls[k]) < 1e-12);

  Tensor plain = assemble_tokens(cls, patches, Tensor::zeros({5, 3}));
  for (std::size_t k = 0; k < 3; ++k) CHECK(plain[k] == cls[k]);
  for (std::size_t i = 0; i < patches.numel(); ++i) CHECK(plain[3 + i] == patches[i]);

  CHECK_THROWS_AS(assemble_tokens(cls, patches, Tensor::zeros({4, 3})), ShapeError);

  EmbeddingBundle full;
  CHECK(full.tokens() == 50);
  Tensor big = assemble_tokens(Vec(768, 0.0), Tensor::zeros({49, 768}), Tensor::zeros({50, 768}));
  CHECK(big.shape() == Shape{50, 768});
}

TEST_CASE("zero frozen layers reduce encode to the projection") {
  EmbeddingBundle b = desk_bundle();
  b.layers.clear();
  ParamStore store(2);
  ModelConfig cfg = ModelConfig::desk();
  auto pe = PromptEncoderParams::make(store, b.d_clip, cfg);
  std::mt19937_64 rng(3);
  Tensor tokens = randn(rng, {b.tokens(), b.d_clip});
  Tensor a = encode(tokens, b, pe), ref = matmul(tokens, pe.w) + pe.b;
  CHECK(testutil::max_abs_diff(a.data(), ref.data()) == 0.0);
}

TEST_CASE("default output geometry") {
  ParamStore store(4);
  EmbeddingBundle b;
  b.layers.clear();
  auto pe = PromptEncoderParams::make(store, 768, ModelConfig::paper());
  CHECK(encode(Tensor::zeros({50, 768}), b, pe).shape() == Shape{50, 128});
}

TEST_CASE("frozen layers receive no gradient, the projection does") {
  EmbeddingBundle b = desk_bundle();
  ParamStore store(5);
  auto pe = PromptEncoderParams::make(store, b.d_clip, ModelConfig::desk());
  Tensor tokens = Tensor({b.tokens(), b.d_clip}, b.pos_table);
  backward(sum(mul(encode(tokens, b, pe), encode(tokens, b, pe))));
  CHECK(pe.w.has_grad());
  double gnorm = 0;
  for (double g : pe.w.grad()) gnorm += g * g;
  CHECK(gnorm > 0.0);
  for (const auto& L : b.layers) {
    for (const Tensor* t : {&L.wq, &L.wk, &L.wv, &L.wo, &L.fc1, &L.fc2, &L.ln1_gain, &L.ln2_bias}) {
      CHECK_FALSE(t->requires_grad());
      CHECK_FALSE(t->has_grad());
    }
  }
}

TEST_CASE("semantic selection separates target and nontarget images") {
  std::vector<int> labels;
  EmbeddingBundle b = desk_bundle(&labels);
  FrozenTokenTable table(b, PromptSpec{b.target_prompt});
  REQUIRE(table.choices().size() == labels.size());
  std::size_t targets = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto want = labels[i] == kTarget ? SemanticChoice::Target : SemanticChoice::Nontarget;
    CHECK(table.choices()[i] == want);
    targets += labels[i] == kTarget;
  }
  CHECK(targets == 32);
  CHECK(labels.size() == 192);
}

TEST_CASE("token table matches the per-image path and is deterministic") {
  EmbeddingBundle b = desk_bundle();
  FrozenTokenTable t1(b, PromptSpec{b.target_prompt}), t2(b, PromptSpec{b.target_prompt});
  CHECK(t1.tokens() == 10);
  CHECK(t1.width() == 64);
  for (std::uint32_t i : {0u, 5u, 191u}) {
    Tensor ref = frozen_image_tokens(b, i);
    CHECK(testutil::max_abs_diff(t1.image(i), ref.data()) == 0.0);
    CHECK(testutil::max_abs_diff(t1.image(i), t2.image(i)) == 0.0);
  }
  CHECK_THROWS_AS(t1.image(192), DataError);
}

TEST_CASE("encode is batch-order independent") {
  EmbeddingBundle b = desk_bundle();
  ParamStore store(6);
  auto pe = PromptEncoderParams::make(store, b.d_clip, ModelConfig::desk());
  const std::size_t per = b.tokens() * b.d_clip;
  std::vector<double> fwd, rev;
  for (std::uint32_t i : {3u, 8u, 40u}) {
    auto src = frozen_image_tokens(b, i);
    fwd.insert(fwd.end(), src.data().begin(), src.data().end());
  }
  for (std::size_t k = 3; k-- > 0;) rev.insert(rev.end(), fwd.begin() + static_cast<long>(k * per), fwd.begin() + static_cast<long>((k + 1) * per));
  Tensor a = project_tokens(Tensor({3, b.tokens(), b.d_clip}, fwd), pe);
  Tensor r = project_tokens(Tensor({3, b.tokens(), b.d_clip}, rev), pe);
  const std::size_t out = b.tokens() * 32;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t j = 0; j < out; ++j) CHECK(a[k * out + j] == r[(2 - k) * out + j]);
  }
}

TEST_CASE("frozen forward on a batch equals per-sample forward") {
  EmbeddingBundle b = desk_bundle();
  std::mt19937_64 rng(7);
  Tensor batch = randn(rng, {3, b.tokens(), b.d_clip});
  Tensor all = frozen_forward(batch, b.layers, b.heads);
  const std::size_t per = b.tokens() * b.d_clip;
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor one({b.tokens(), b.d_clip}, std::vector<double>(batch.data().begin() + static_cast<long>(k * per),
                                                           batch.data().begin() + static_cast<long>((k + 1) * per)));
    Tensor o = frozen_forward(one, b.layers, b.heads);
    CHECK(testutil::max_abs_diff(o.data(), all.data().subspan(k * per, per)) < 1e-12);
  }
}

TEST_CASE("prompts must match the bundle") {
  EmbeddingBundle b = desk_bundle();
  CHECK_THROWS_AS(FrozenTokenTable(b, PromptSpec{"car"}), ConfigError);
  CHECK_THROWS_AS(FrozenTokenTable(b, PromptSpec{b.target_prompt, "background"}), ConfigError);
  CHECK_THROWS_AS(PromptSpec{""}.validate(), ConfigError);
}
