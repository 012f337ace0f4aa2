// Transformer building blocks shared by generators, discriminators and the
// retrieval model. All layers use the pre-normalization residual layout:
//   x = x + Attn(LN(x));  x = x + FFN(LN(x)).
#pragma once

#include "cohedance/autodiff.hpp"
#include "cohedance/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace cohedance {

struct AttentionConfig {
  int model_dim = 64;
  int num_heads = 4;
  int ffn_mult = 2;

  void validate() const {
    if (model_dim <= 0 || num_heads <= 0) throw ShapeError("attention config: dims must be positive");
    if (model_dim % num_heads != 0) throw ShapeError("attention config: num_heads must divide model_dim");
    if (ffn_mult <= 0) throw ShapeError("attention config: ffn_mult must be positive");
  }
};

/// Additive T x T mask: 0 on and below the diagonal, kMaskedScore above.
/// The rectangular form lets row r see key columns <= r.
template <class S>
Mat<S> causal_mask(int rows, int cols) {
  Mat<S> m = Mat<S>::Zero(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = r + 1; c < cols; ++c) m(r, c) = static_cast<S>(kMaskedScore);
  return m;
}

template <class S>
Mat<S> causal_mask(int t) {
  return causal_mask<S>(t, t);
}

/// Sinusoidal encoding: even columns sin(t / 10000^(2i/C)), odd columns cos.
template <class S>
Mat<S> positional_encoding(int t, int c) {
  if (t < 1 || c < 1) throw ShapeError("positional_encoding: T and C must be positive");
  Mat<S> pe(t, c);
  for (int r = 0; r < t; ++r)
    for (int k = 0; k < c; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / c);
      const double a = r * freq;
      pe(r, k) = static_cast<S>(k % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  return pe;
}

/// Parameter lookup inside one graph. Non-trainable views bring the
/// parameters in as constants (used for frozen discriminators).
template <class S>
struct Params {
  Graph<S>& graph;
  const ParamStore<S>& store;
  bool trainable = true;

  Var<S> operator()(const std::string& name) const { return graph.param(store, name, trainable); }
};

namespace init {

template <class S>
void linear(ParamStore<S>& store, const std::string& name, int in, int out, Rng& rng, double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / (in + out));
  Mat<S> w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.uniform(-a, a));
  store.values[name + ".w"] = std::move(w);
  store.values[name + ".b"] = Mat<S>::Zero(1, out);
}

template <class S>
void layer_norm(ParamStore<S>& store, const std::string& name, int dim) {
  store.values[name + ".g"] = Mat<S>::Ones(1, dim);
  store.values[name + ".b"] = Mat<S>::Zero(1, dim);
}

template <class S>
void attention(ParamStore<S>& store, const std::string& name, int dim, Rng& rng) {
  linear(store, name + ".q", dim, dim, rng);
  linear(store, name + ".k", dim, dim, rng);
  linear(store, name + ".v", dim, dim, rng);
  linear(store, name + ".o", dim, dim, rng);
}

template <class S>
void feed_forward(ParamStore<S>& store, const std::string& name, const AttentionConfig& cfg, Rng& rng) {
  linear(store, name + ".fc1", cfg.model_dim, cfg.model_dim * cfg.ffn_mult, rng);
  linear(store, name + ".fc2", cfg.model_dim * cfg.ffn_mult, cfg.model_dim, rng);
}

/// Parameters for temporal_self_layer and spatial_layer.
template <class S>
void self_layer(ParamStore<S>& store, const std::string& name, const AttentionConfig& cfg, Rng& rng) {
  layer_norm(store, name + ".ln_attn", cfg.model_dim);
  attention(store, name + ".attn", cfg.model_dim, rng);
  layer_norm(store, name + ".ln_ffn", cfg.model_dim);
  feed_forward(store, name + ".ffn", cfg, rng);
}

template <class S>
void cross_layer(ParamStore<S>& store, const std::string& name, const AttentionConfig& cfg, Rng& rng) {
  layer_norm(store, name + ".ln_q", cfg.model_dim);
  layer_norm(store, name + ".ln_kv", cfg.model_dim);
  attention(store, name + ".attn", cfg.model_dim, rng);
  layer_norm(store, name + ".ln_ffn", cfg.model_dim);
  feed_forward(store, name + ".ffn", cfg, rng);
}

}  // namespace init

template <class S>
Var<S> linear(const Params<S>& p, const std::string& name, Var<S> x) {
  return ad::linear(x, p(name + ".w"), p(name + ".b"));
}

template <class S>
Var<S> layer_norm(const Params<S>& p, const std::string& name, Var<S> x) {
  return ad::layer_norm(x, p(name + ".g"), p(name + ".b"));
}

/// Projected multi-head attention: queries from xq, keys and values from xkv.
template <class S>
Var<S> multihead_attention(const Params<S>& p, const std::string& name, Var<S> xq, Var<S> xkv,
                           const AttentionConfig& cfg, int groups, const Mat<S>* mask) {
  Var<S> q = linear(p, name + ".q", xq);
  Var<S> k = linear(p, name + ".k", xkv);
  Var<S> v = linear(p, name + ".v", xkv);
  Var<S> a = ad::attention(q, k, v, cfg.num_heads, groups, mask);
  return linear(p, name + ".o", a);
}

template <class S>
Var<S> feed_forward_block(const Params<S>& p, const std::string& name, Var<S> x) {
  Var<S> h = ad::gelu(linear(p, name + ".ffn.fc1", layer_norm(p, name + ".ln_ffn", x)));
  return ad::add(x, linear(p, name + ".ffn.fc2", h));
}

/// Self-attention over time followed by the feed-forward block. `x` holds
/// `groups` independent sequences stacked row-wise, each T = rows/groups
/// long; `causal` restricts row t to attend to rows <= t of its group.
template <class S>
Var<S> temporal_self_layer(const Params<S>& p, const std::string& name, Var<S> x, const AttentionConfig& cfg,
                           bool causal, int groups = 1) {
  const int t = static_cast<int>(x.rows()) / groups;
  Mat<S> mask;
  if (causal) mask = causal_mask<S>(t);
  Var<S> h = layer_norm(p, name + ".ln_attn", x);
  Var<S> a = multihead_attention(p, name + ".attn", h, h, cfg, groups, causal ? &mask : nullptr);
  return feed_forward_block(p, name, ad::add(x, a));
}

/// Row permutations between dancer-major (dancer * T + t) and time-major
/// (t * N + dancer) layouts.
inline std::vector<int> dancer_to_time_major(int dancers, int frames) {
  std::vector<int> idx(static_cast<std::size_t>(dancers) * static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t)
    for (int i = 0; i < dancers; ++i) idx[static_cast<std::size_t>(t * dancers + i)] = i * frames + t;
  return idx;
}

inline std::vector<int> time_to_dancer_major(int dancers, int frames) {
  std::vector<int> idx(static_cast<std::size_t>(dancers) * static_cast<std::size_t>(frames));
  for (int i = 0; i < dancers; ++i)
    for (int t = 0; t < frames; ++t) idx[static_cast<std::size_t>(i * frames + t)] = t * dancers + i;
  return idx;
}

/// Attention across dancers at each time step, no positional encoding.
/// `x` is dancer-major with N blocks of T rows; output has the same layout.
template <class S>
Var<S> spatial_layer(const Params<S>& p, const std::string& name, Var<S> x, const AttentionConfig& cfg, int dancers) {
  const int frames = static_cast<int>(x.rows()) / dancers;
  if (frames * dancers != x.rows()) throw ShapeError("spatial_layer: rows not divisible by dancer count");
  if (frames == 1 || dancers == 1) {
    // Layouts coincide (frames == 1) or groups are singletons (dancers == 1).
    if (dancers == 1) {
      Var<S> h = layer_norm(p, name + ".ln_attn", x);
      Var<S> a = multihead_attention<S>(p, name + ".attn", h, h, cfg, frames, nullptr);
      return feed_forward_block(p, name, ad::add(x, a));
    }
    return temporal_self_layer(p, name, x, cfg, false, 1);
  }
  Var<S> xt = ad::gather_rows(x, dancer_to_time_major(dancers, frames));
  Var<S> yt = temporal_self_layer(p, name, xt, cfg, false, frames);
  return ad::gather_rows(yt, time_to_dancer_major(dancers, frames));
}

/// Queries attend over a key/value memory, then the feed-forward block.
/// xq holds `groups` blocks and mem the matching `groups` blocks.
template <class S>
Var<S> cross_attention_layer(const Params<S>& p, const std::string& name, Var<S> xq, Var<S> mem,
                             const AttentionConfig& cfg, const Mat<S>* mask, int groups = 1) {
  Var<S> hq = layer_norm(p, name + ".ln_q", xq);
  Var<S> hkv = layer_norm(p, name + ".ln_kv", mem);
  Var<S> a = multihead_attention(p, name + ".attn", hq, hkv, cfg, groups, mask);
  return feed_forward_block(p, name, ad::add(xq, a));
}

/// Value-level single-head attention: softmax(Q K^T / sqrt(C) + mask) V.
template <class S>
Mat<S> scaled_dot_attention(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const Mat<S>* mask = nullptr) {
  Graph<S> g(false);
  return ad::attention(g.constant(q), g.constant(k), g.constant(v), 1, 1, mask).value();
}

/// Mean over row blocks: (B * T) x C -> T x C, averaging the B blocks.
template <class S>
Var<S> mean_over_blocks(Var<S> x, int blocks) {
  const Eigen::Index t = x.rows() / blocks;
  if (t * blocks != x.rows()) throw ShapeError("mean_over_blocks: rows not divisible");
  Mat<S> avg = Mat<S>::Zero(t, x.rows());
  for (int b = 0; b < blocks; ++b)
    for (Eigen::Index r = 0; r < t; ++r) avg(r, b * t + r) = S(1) / static_cast<S>(blocks);
  return ad::matmul(x.graph->constant(std::move(avg)), x);
}

/// Mean over all rows: R x C -> 1 x C.
template <class S>
Var<S> mean_rows(Var<S> x) {
  Mat<S> avg = Mat<S>::Constant(1, x.rows(), S(1) / static_cast<S>(x.rows()));
  return ad::matmul(x.graph->constant(std::move(avg)), x);
}

/// Tile a T x C block `times` times row-wise.
template <class S>
Var<S> repeat_rows(Var<S> x, int times) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(x.rows() * times));
  for (int b = 0; b < times; ++b)
    for (Eigen::Index r = 0; r < x.rows(); ++r) idx.push_back(static_cast<int>(r));
  return ad::gather_rows(x, std::move(idx));
}

}  // namespace cohedance
