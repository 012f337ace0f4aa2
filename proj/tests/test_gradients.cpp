#include "cohedance/training.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace cohedance;
using namespace testing_support;
using M = Mat<double>;

namespace {

constexpr double kTol = 1e-3;

GeneratorConfig tiny_generator() {
  GeneratorConfig c;
  c.attn = {4, 2, 2};
  c.layers = 1;
  c.head_gain = 1.0;
  return c;
}

DiscriminatorConfig tiny_discriminator() {
  DiscriminatorConfig c;
  c.attn = {4, 2, 2};
  c.layers = 1;
  return c;
}

/// Weighted sum that turns any matrix output into a scalar with a
/// non-trivial gradient.
Var<double> probe(Var<double> x, const M& weights) {
  return ad::sum(ad::hadamard(x, x.graph->constant(weights)));
}

std::vector<ShiftedPair> tiny_batch(Rng& rng) {
  std::vector<ShiftedPair> out;
  for (int k = 0; k < 2; ++k) out.push_back(make_shifted({"p", random_music(5, rng), random_dance(2, 5, rng)}));
  return out;
}

}  // namespace

TEST(Gradients, AttentionWithRespectToQKV) {
  Rng rng(1);
  ParamStore<double> store;
  store.values["q"] = random_matrix<double>(3, 4, rng);
  store.values["k"] = random_matrix<double>(3, 4, rng);
  store.values["v"] = random_matrix<double>(3, 4, rng);
  const M w = random_matrix<double>(3, 4, rng);
  auto loss = [&](Graph<double>& g, const ParamStore<double>& s) {
    return probe(ad::attention(g.param(s, "q"), g.param(s, "k"), g.param(s, "v"), 1, 1), w);
  };
  EXPECT_LT(gradient_check(store, loss, rng, 12), kTol);
}

TEST(Gradients, MaskedMultiHeadAttention) {
  Rng rng(2);
  ParamStore<double> store;
  store.values["q"] = random_matrix<double>(6, 4, rng);
  store.values["k"] = random_matrix<double>(6, 4, rng);
  store.values["v"] = random_matrix<double>(6, 4, rng);
  const M w = random_matrix<double>(6, 4, rng);
  const M mask = causal_mask<double>(3);
  auto loss = [&](Graph<double>& g, const ParamStore<double>& s) {
    return probe(ad::attention(g.param(s, "q"), g.param(s, "k"), g.param(s, "v"), 2, 2, &mask), w);
  };
  EXPECT_LT(gradient_check(store, loss, rng, 12), kTol);
}

TEST(Gradients, NormalizationAndActivations) {
  Rng rng(3);
  ParamStore<double> store;
  store.values["x"] = random_matrix<double>(4, 5, rng);
  store.values["g"] = random_matrix<double>(1, 5, rng);
  store.values["b"] = random_matrix<double>(1, 5, rng);
  const M w = random_matrix<double>(4, 5, rng);
  auto loss = [&](Graph<double>& g, const ParamStore<double>& s) {
    Var<double> x = g.param(s, "x");
    Var<double> h = ad::gelu(ad::layer_norm(x, g.param(s, "g"), g.param(s, "b")));
    return ad::add(probe(ad::l2_normalize_rows(h), w), ad::mean(ad::sigmoid(x)));
  };
  EXPECT_LT(gradient_check(store, loss, rng, 12), kTol);
}

TEST(Gradients, ContrastiveCrossEntropy) {
  Rng rng(4);
  ParamStore<double> store;
  store.values["logits"] = random_matrix<double>(4, 4, rng);
  auto loss = [&](Graph<double>& g, const ParamStore<double>& s) { return ad::cross_entropy_diagonal(g.param(s, "logits")); };
  EXPECT_LT(gradient_check(store, loss, rng, 8), kTol);
}

TEST(Gradients, ReconstructionLoss) {
  Rng rng(5);
  const auto m = random_music(4, rng);
  const auto d = random_dance(2, 4, rng);
  ParamStore<double> store;
  store.values["m2d"] = to_matrix<double>(random_dance(2, 4, rng));
  store.values["d2m"] = to_matrix<double>(random_music(4, rng));
  auto loss = [&](Graph<double>& g, const ParamStore<double>& s) {
    return loss_rec(g.constant(m.feats), g.constant(d.data), g.param(s, "m2d"), g.param(s, "d2m"), 2, kFps);
  };
  EXPECT_LT(gradient_check(store, loss, rng, 10), kTol);
}

TEST(Gradients, CycleLossThroughBothGenerators) {
  Rng rng(6);
  ModelSet<double> models(tiny_generator(), tiny_discriminator(), 1);
  const auto batch = tiny_batch(rng);
  TrainConfig cfg;
  auto cyc = [&](Graph<double>& g, const ParamStore<double>&) { return generator_losses(g, models, batch, cfg).cyc; };
  EXPECT_LT(gradient_check(models.m2d.params(), cyc, rng, 8), kTol);
  EXPECT_LT(gradient_check(models.d2m.params(), cyc, rng, 8), kTol);
}

TEST(Gradients, CycleLossAgainstEncoderInputWeight) {
  Rng rng(7);
  ModelSet<double> models(tiny_generator(), tiny_discriminator(), 2);
  const auto batch = tiny_batch(rng);
  TrainConfig cfg;
  Graph<double> g(true);
  g.backward(generator_losses(g, models, batch, cfg).cyc);
  const M grad = g.param_grads(models.d2m.params()).at("d2m.enc.in.w");
  M& w = models.d2m.params().at("d2m.enc.in.w");
  auto eval = [&] {
    Graph<double> ge(false);
    return generator_losses(ge, models, batch, cfg).cyc.scalar();
  };
  int checked = 0;
  for (Eigen::Index k = 0; k < w.size() && checked < 6; k += 37) {
    if (std::abs(grad.data()[k]) < 1e-6) continue;
    const double orig = w.data()[k], h = 1e-6;
    w.data()[k] = orig + h;
    const double up = eval();
    w.data()[k] = orig - h;
    const double down = eval();
    w.data()[k] = orig;
    const double numeric = (up - down) / (2 * h);
    EXPECT_NEAR(numeric, grad.data()[k], kTol * std::max(std::abs(numeric), 1e-8)) << "entry " << k;
    ++checked;
  }
  EXPECT_GE(checked, 5);
}

TEST(Gradients, DiscriminatorLoss) {
  Rng rng(8);
  ModelSet<double> models(tiny_generator(), tiny_discriminator(), 3);
  const auto batch = tiny_batch(rng);
  std::vector<M> fake_d, fake_m;
  for (const auto& b : batch) {
    fake_d.push_back(to_matrix<double>(random_dance(2, b.frames(), rng)));
    fake_m.push_back(to_matrix<double>(random_music(b.frames(), rng)));
  }
  auto loss = [&](Graph<double>& g, const ParamStore<double>&) { return discriminator_loss(g, models, batch, fake_d, fake_m); };
  EXPECT_LT(gradient_check(models.disc_music.params(), loss, rng, 8), kTol);
  EXPECT_LT(gradient_check(models.disc_dance.params(), loss, rng, 8), kTol);
}

TEST(Gradients, FoolLossThroughFrozenDiscriminators) {
  Rng rng(9);
  ModelSet<double> models(tiny_generator(), tiny_discriminator(), 4);
  const auto batch = tiny_batch(rng);
  TrainConfig cfg;
  auto loss = [&](Graph<double>& g, const ParamStore<double>&) {
    auto terms = generator_losses(g, models, batch, cfg);
    add_fool_term(g, models, batch, terms, cfg);
    return terms.fd;
  };
  EXPECT_LT(gradient_check(models.m2d.params(), loss, rng, 8), kTol);
  EXPECT_LT(gradient_check(models.d2m.params(), loss, rng, 8), kTol);

  Graph<double> g(true);
  auto terms = generator_losses(g, models, batch, cfg);
  add_fool_term(g, models, batch, terms, cfg);
  g.backward(terms.fd);
  EXPECT_TRUE(g.param_grads(models.disc_music.params()).empty());
  EXPECT_TRUE(g.param_grads(models.disc_dance.params()).empty());
}

TEST(Gradients, FullGeneratorObjective) {
  Rng rng(10);
  ModelSet<double> models(tiny_generator(), tiny_discriminator(), 5);
  const auto batch = tiny_batch(rng);
  TrainConfig cfg;
  auto loss = [&](Graph<double>& g, const ParamStore<double>&) {
    auto terms = generator_losses(g, models, batch, cfg);
    add_fool_term(g, models, batch, terms, cfg);
    return terms.total;
  };
  EXPECT_LT(gradient_check(models.m2d.params(), loss, rng, 10), kTol);
  EXPECT_LT(gradient_check(models.d2m.params(), loss, rng, 10), kTol);
}
