#include "cohedance/nn.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace cohedance;
using namespace testing_support;
using M = Mat<double>;

namespace {

struct Layer {
  AttentionConfig cfg{8, 2, 2};
  ParamStore<double> store;
  Rng rng{42};

  Layer() {
    init::self_layer(store, "self", cfg, rng);
    init::cross_layer(store, "cross", cfg, rng);
  }

  M temporal(const M& x, bool causal, int groups = 1) {
    Graph<double> g(false);
    Params<double> p{g, store, false};
    return temporal_self_layer(p, "self", g.constant(x), cfg, causal, groups).value();
  }

  M spatial(const M& x, int dancers) {
    Graph<double> g(false);
    Params<double> p{g, store, false};
    return spatial_layer(p, "self", g.constant(x), cfg, dancers).value();
  }

  M cross(const M& q, const M& kv, const M* mask) {
    Graph<double> g(false);
    Params<double> p{g, store, false};
    return cross_attention_layer(p, "cross", g.constant(q), g.constant(kv), cfg, mask).value();
  }

  /// The layer applied to a lone token, written out by hand: attention over
  /// one key returns that key's value projection.
  M lone_token(const std::string& name, const M& x, const M* memory = nullptr) {
    Graph<double> g(false);
    Params<double> p{g, store, false};
    Var<double> xv = g.constant(x);
    Var<double> kv = memory ? layer_norm(p, name + (memory ? ".ln_kv" : ".ln_attn"), g.constant(*memory))
                            : layer_norm(p, name + ".ln_attn", xv);
    Var<double> v = linear(p, name + ".attn.v", kv);
    if (memory) v = repeat_rows(v, static_cast<int>(x.rows()));
    Var<double> h = ad::add(xv, linear(p, name + ".attn.o", v));
    return feed_forward_block(p, name, h).value();
  }
};

double max_abs(const M& a) { return a.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(ScaledDotAttention, SingleKeyReturnsItsValue) {
  Rng rng(1);
  const M q = random_matrix<double>(3, 4, rng), k = random_matrix<double>(1, 4, rng), v = random_matrix<double>(1, 4, rng);
  const M out = scaled_dot_attention(q, k, v);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(out.row(r), v.row(0));
}

TEST(ScaledDotAttention, ZeroQueryAveragesValues) {
  Rng rng(2);
  const M q = M::Zero(2, 4), k = random_matrix<double>(5, 4, rng), v = random_matrix<double>(5, 4, rng);
  const M out = scaled_dot_attention(q, k, v);
  for (int r = 0; r < 2; ++r) EXPECT_LT((out.row(r) - v.colwise().mean()).norm(), 1e-12);
}

TEST(ScaledDotAttention, HandComputedSoftmax) {
  // C = 4, so scores are divided by 2; q.k1 = 2 ln 3 gives a scaled score of ln 3.
  M q(1, 4), k(2, 4), v(2, 4);
  q << 2.0 * std::log(3.0), 0, 0, 0;
  k << 1, 0, 0, 0, 0, 0, 0, 0;
  v << 1, 2, 3, 4, -4, 0, 8, 1;
  const M out = scaled_dot_attention(q, k, v);
  const M expected = 0.75 * v.row(0) + 0.25 * v.row(1);
  EXPECT_LT((out - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ScaledDotAttention, RowsAreStochastic) {
  Rng rng(3);
  const M q = random_matrix<double>(6, 4, rng), k = random_matrix<double>(4, 4, rng);
  const M mask = causal_mask<double>(6, 4);
  const M w = scaled_dot_attention(q, k, M(M::Identity(4, 4)), &mask);
  for (int r = 0; r < 6; ++r) {
    EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-6);
    for (int c = r + 1; c < 4; ++c) EXPECT_LT(w(r, c), 1e-12);
  }
}

TEST(ScaledDotAttention, FullyMaskedRowIsAnError) {
  Rng rng(4);
  const M q = random_matrix<double>(2, 4, rng), k = random_matrix<double>(3, 4, rng);
  M mask = M::Zero(2, 3);
  mask.row(1).setConstant(kMaskedScore);
  EXPECT_THROW(scaled_dot_attention(q, k, k, &mask), FullyMaskedError);
}

TEST(CausalMask, LowerTriangularSupport) {
  const M m = causal_mask<double>(4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(m(r, c), c <= r ? 0.0 : kMaskedScore);
}

TEST(TemporalSelfLayer, CausalOutputsIgnoreTheFuture) {
  Layer L;
  Rng rng(5);
  const M x = random_matrix<double>(10, 8, rng);
  const M base = L.temporal(x, true);
  for (int t = 0; t < 9; ++t) {
    M y = x;
    y.bottomRows(9 - t) = random_matrix<double>(9 - t, 8, rng);
    const M out = L.temporal(y, true);
    EXPECT_LT(max_abs(out.topRows(t + 1) - base.topRows(t + 1)), 1e-5) << "t=" << t;
  }
}

TEST(TemporalSelfLayer, SingleTokenIsFeedForward) {
  Layer L;
  Rng rng(6);
  const M x = random_matrix<double>(1, 8, rng);
  EXPECT_LT(max_abs(L.temporal(x, false) - L.lone_token("self", x)), 1e-12);
}

TEST(TemporalSelfLayer, ShapeIsPreserved) {
  Layer L;
  Rng rng(7);
  for (int t = 1; t <= 16; ++t) {
    const M out = L.temporal(random_matrix<double>(t, 8, rng), t % 2 == 0);
    EXPECT_EQ(out.rows(), t);
    EXPECT_EQ(out.cols(), 8);
  }
}

TEST(SpatialLayer, SingleDancerIsFeedForward) {
  Layer L;
  Rng rng(8);
  const M x = random_matrix<double>(1, 8, rng);
  EXPECT_LT(max_abs(L.spatial(x, 1) - L.lone_token("self", x)), 1e-12);
}

TEST(SpatialLayer, PermutingDancersPermutesOutputs) {
  Layer L;
  Rng rng(9);
  const int n = 4, t = 5;
  const M x = random_matrix<double>(n * t, 8, rng);
  const M out = L.spatial(x, n);
  const std::vector<int> perm = {2, 0, 3, 1};
  M xp(n * t, 8);
  for (int i = 0; i < n; ++i) xp.middleRows(i * t, t) = x.middleRows(perm[i] * t, t);
  const M outp = L.spatial(xp, n);
  for (int i = 0; i < n; ++i) EXPECT_LT(max_abs(outp.middleRows(i * t, t) - out.middleRows(perm[i] * t, t)), 1e-6);
}

TEST(SpatialLayer, IdenticalDancersMatch) {
  Layer L;
  Rng rng(10);
  const M one = random_matrix<double>(3, 8, rng);
  M x(6, 8);
  x << one, one;
  const M out = L.spatial(x, 2);
  EXPECT_LT(max_abs(out.topRows(3) - out.bottomRows(3)), 1e-12);
}

TEST(SpatialLayer, NoCrossTimeMixing) {
  Layer L;
  Rng rng(11);
  const M x = random_matrix<double>(3 * 4, 8, rng);
  M y = x;
  for (int i = 0; i < 3; ++i) y.row(i * 4 + 2) = random_matrix<double>(1, 8, rng);
  const M a = L.spatial(x, 3), b = L.spatial(y, 3);
  for (int i = 0; i < 3; ++i)
    for (int t : {0, 1, 3}) EXPECT_LT(max_abs(a.row(i * 4 + t) - b.row(i * 4 + t)), 1e-12);
}

TEST(CrossAttentionLayer, SingleMemoryToken) {
  Layer L;
  Rng rng(12);
  const M q = random_matrix<double>(4, 8, rng), mem = random_matrix<double>(1, 8, rng);
  EXPECT_LT(max_abs(L.cross(q, mem, nullptr) - L.lone_token("cross", q, &mem)), 1e-12);
}

TEST(CrossAttentionLayer, CausalMaskHidesLaterMemory) {
  Layer L;
  Rng rng(13);
  const M q = random_matrix<double>(6, 8, rng), mem = random_matrix<double>(6, 8, rng);
  const M mask = causal_mask<double>(6);
  const M base = L.cross(q, mem, &mask);
  for (int t = 0; t < 5; ++t) {
    M m2 = mem;
    m2.bottomRows(5 - t) = random_matrix<double>(5 - t, 8, rng);
    EXPECT_LT(max_abs(L.cross(q, m2, &mask).topRows(t + 1) - base.topRows(t + 1)), 1e-5);
  }
}

TEST(CrossAttentionLayer, ZeroMaskMatchesUnmasked) {
  Layer L;
  Rng rng(14);
  const M q = random_matrix<double>(3, 8, rng), mem = random_matrix<double>(5, 8, rng);
  const M zero = M::Zero(3, 5);
  EXPECT_LT(max_abs(L.cross(q, mem, &zero) - L.cross(q, mem, nullptr)), 1e-12);
}

TEST(PositionalEncoding, FirstRowAlternatesZeroOne) {
  const M pe = positional_encoding<double>(3, 8);
  for (int k = 0; k < 8; ++k) EXPECT_EQ(pe(0, k), k % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalEncoding, DeterministicAndDistinct) {
  EXPECT_EQ(positional_encoding<double>(7, 16), positional_encoding<double>(7, 16));
  const M pe = positional_encoding<double>(3, 16);
  EXPECT_GT((pe.row(1) - pe.row(2)).norm(), 0.0);
}

TEST(AttentionConfig, HeadsMustDivideDim) {
  AttentionConfig c{10, 4, 2};
  EXPECT_THROW(c.validate(), ShapeError);
}
