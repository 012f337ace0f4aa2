// Music2Dance and Dance2Music generation blocks.
//
// Sequence convention for both blocks: the decoder input (context) at row t
// is the frame preceding the one predicted at row t. Row 0 of the context is
// the initial frame; output row t is the prediction for frame t + 1, and it
// may only depend on context rows <= t and conditioning rows <= t.
#pragma once

#include "cohedance/audio.hpp"
#include "cohedance/autodiff.hpp"
#include "cohedance/motion.hpp"
#include "cohedance/nn.hpp"
#include "cohedance/rng.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cohedance {

struct GeneratorConfig {
  AttentionConfig attn;
  int layers = 2;
  // Predict the change from the context frame rather than the frame itself.
  bool residual_dance = true;
  bool residual_music = false;
  // Gain of the output projection's initialization.
  double head_gain = 0.1;

  void validate() const {
    attn.validate();
    if (layers < 1) throw ShapeError("generator config: layers must be >= 1");
  }
};

struct GenerationConfig {
  int horizon = 0;  // 0 = length of the music
  int dancers = 1;
  std::uint64_t seed = 0;
  bool teacher_forcing = false;
};

template <class S>
Mat<S> to_matrix(const GroupDanceSequence& d) {
  return d.data.template cast<S>();
}

template <class S>
Mat<S> to_matrix(const MusicFeatureSequence& m) {
  return m.feats.template cast<S>();
}

template <class S>
GroupDanceSequence dance_from_matrix(const Mat<S>& x, int dancers, double fps) {
  const int frames = static_cast<int>(x.rows()) / dancers;
  GroupDanceSequence d(dancers, frames, fps);
  d.data = x.template cast<double>();
  return d;
}

template <class S>
MusicFeatureSequence music_from_matrix(const Mat<S>& x, double fps) {
  MusicFeatureSequence m;
  m.fps = fps;
  m.feats = x.template cast<double>();
  return m;
}

namespace gen_detail {

template <class S>
Var<S> add_positions(Var<S> x, int groups) {
  const int t = static_cast<int>(x.rows()) / groups;
  Mat<S> pe = positional_encoding<S>(t, static_cast<int>(x.cols()));
  Mat<S> tiled(x.rows(), x.cols());
  for (int g = 0; g < groups; ++g) tiled.middleRows(static_cast<Eigen::Index>(g) * t, t) = pe;
  return ad::add(x, x.graph->constant(std::move(tiled)));
}

inline std::string layer_name(const std::string& base, int i) { return base + ".L" + std::to_string(i); }

}  // namespace gen_detail

/// Music Encoder (non-causal temporal stack) + Dance Decoder (per layer:
/// spatial processor, causal temporal self-attention, causal cross-attention
/// onto the music memory replicated once per dancer).
template <class S>
class Music2Dance {
 public:
  Music2Dance() = default;
  Music2Dance(const GeneratorConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, "music2dance"));
    const int c = cfg.attn.model_dim;
    init::linear(params_, "m2d.enc.in", kMusicDim, c, rng);
    for (int i = 0; i < cfg.layers; ++i) init::self_layer(params_, gen_detail::layer_name("m2d.enc", i), cfg.attn, rng);
    init::layer_norm(params_, "m2d.enc.ln_out", c);
    init::linear(params_, "m2d.dec.in", kPoseDim, c, rng);
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string base = gen_detail::layer_name("m2d.dec", i);
      init::self_layer(params_, base + ".spatial", cfg.attn, rng);
      init::self_layer(params_, base + ".temporal", cfg.attn, rng);
      init::cross_layer(params_, base + ".cross", cfg.attn, rng);
    }
    init::layer_norm(params_, "m2d.dec.ln_out", c);
    init::linear(params_, "m2d.dec.out", c, kPoseDim, rng, cfg.head_gain);
  }

  const GeneratorConfig& config() const { return config_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  /// music: T x 438 -> memory T x C.
  Var<S> encode(const Params<S>& p, Var<S> music) const {
    if (music.cols() != kMusicDim) throw ShapeError("music2dance: music must be 438 wide");
    Var<S> x = gen_detail::add_positions(linear(p, "m2d.enc.in", music), 1);
    for (int i = 0; i < config_.layers; ++i)
      x = temporal_self_layer(p, gen_detail::layer_name("m2d.enc", i), x, config_.attn, false);
    return layer_norm(p, "m2d.enc.ln_out", x);
  }

  /// context: (N * L) x 147 dancer-major, L <= memory length.
  Var<S> decode(const Params<S>& p, Var<S> memory, Var<S> context, int dancers) const {
    if (context.cols() != kPoseDim) throw ShapeError("music2dance: context must be 147 wide");
    if (dancers < 1 || context.rows() % dancers != 0) throw ShapeError("music2dance: context rows not divisible by N");
    const int len = static_cast<int>(context.rows()) / dancers;
    if (len > memory.rows()) throw ShapeError("music2dance: context longer than music");
    const Mat<S> cross_mask = causal_mask<S>(len, static_cast<int>(memory.rows()));
    Var<S> mem = repeat_rows(memory, dancers);
    Var<S> x = gen_detail::add_positions(linear(p, "m2d.dec.in", context), dancers);
    for (int i = 0; i < config_.layers; ++i) {
      const std::string base = gen_detail::layer_name("m2d.dec", i);
      x = spatial_layer(p, base + ".spatial", x, config_.attn, dancers);
      x = temporal_self_layer(p, base + ".temporal", x, config_.attn, true, dancers);
      x = cross_attention_layer(p, base + ".cross", x, mem, config_.attn, &cross_mask, dancers);
    }
    Var<S> out = linear(p, "m2d.dec.out", layer_norm(p, "m2d.dec.ln_out", x));
    return config_.residual_dance ? ad::add(out, context) : out;
  }

  Var<S> forward(const Params<S>& p, Var<S> music, Var<S> context, int dancers) const {
    if (context.rows() != music.rows() * dancers) throw ShapeError("music2dance: T mismatch between music and context");
    return decode(p, encode(p, music), context, dancers);
  }

 private:
  GeneratorConfig config_;
  ParamStore<S> params_;
};

/// Dance Encoder (per layer: spatial processor + non-causal temporal
/// encoder, then mean over dancers) + Music Decoder (causal temporal
/// self-attention + causal cross-attention onto the dance memory).
template <class S>
class Dance2Music {
 public:
  Dance2Music() = default;
  Dance2Music(const GeneratorConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, "dance2music"));
    const int c = cfg.attn.model_dim;
    init::linear(params_, "d2m.enc.in", kPoseDim, c, rng);
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string base = gen_detail::layer_name("d2m.enc", i);
      init::self_layer(params_, base + ".spatial", cfg.attn, rng);
      init::self_layer(params_, base + ".temporal", cfg.attn, rng);
    }
    init::layer_norm(params_, "d2m.enc.ln_out", c);
    init::linear(params_, "d2m.dec.in", kMusicDim, c, rng);
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string base = gen_detail::layer_name("d2m.dec", i);
      init::self_layer(params_, base + ".temporal", cfg.attn, rng);
      init::cross_layer(params_, base + ".cross", cfg.attn, rng);
    }
    init::layer_norm(params_, "d2m.dec.ln_out", c);
    init::linear(params_, "d2m.dec.out", c, kMusicDim, rng, cfg.head_gain);
  }

  const GeneratorConfig& config() const { return config_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  /// dance: (N * T) x 147 dancer-major -> memory T x C (mean over dancers).
  Var<S> encode(const Params<S>& p, Var<S> dance, int dancers) const {
    if (dance.cols() != kPoseDim) throw ShapeError("dance2music: dance must be 147 wide");
    if (dancers < 1 || dance.rows() % dancers != 0) throw ShapeError("dance2music: rows not divisible by N");
    Var<S> x = gen_detail::add_positions(linear(p, "d2m.enc.in", dance), dancers);
    for (int i = 0; i < config_.layers; ++i) {
      const std::string base = gen_detail::layer_name("d2m.enc", i);
      x = spatial_layer(p, base + ".spatial", x, config_.attn, dancers);
      x = temporal_self_layer(p, base + ".temporal", x, config_.attn, false, dancers);
    }
    return layer_norm(p, "d2m.enc.ln_out", mean_over_blocks(x, dancers));
  }

  /// context: L x 438 with L <= memory length.
  Var<S> decode(const Params<S>& p, Var<S> memory, Var<S> context) const {
    if (context.cols() != kMusicDim) throw ShapeError("dance2music: context must be 438 wide");
    const int len = static_cast<int>(context.rows());
    if (len > memory.rows()) throw ShapeError("dance2music: context longer than dance");
    const Mat<S> cross_mask = causal_mask<S>(len, static_cast<int>(memory.rows()));
    Var<S> x = gen_detail::add_positions(linear(p, "d2m.dec.in", context), 1);
    for (int i = 0; i < config_.layers; ++i) {
      const std::string base = gen_detail::layer_name("d2m.dec", i);
      x = temporal_self_layer(p, base + ".temporal", x, config_.attn, true);
      x = cross_attention_layer(p, base + ".cross", x, memory, config_.attn, &cross_mask);
    }
    Var<S> out = linear(p, "d2m.dec.out", layer_norm(p, "d2m.dec.ln_out", x));
    return config_.residual_music ? ad::add(out, context) : out;
  }

  Var<S> forward(const Params<S>& p, Var<S> dance, Var<S> context, int dancers) const {
    if (dance.rows() != context.rows() * dancers) throw ShapeError("dance2music: T mismatch between dance and context");
    return decode(p, encode(p, dance, dancers), context);
  }

 private:
  GeneratorConfig config_;
  ParamStore<S> params_;
};

/// Teacher-forced Music2Dance pass: predictions for frames 1..T.
template <class S>
GroupDanceSequence m2d_forward(const Music2Dance<S>& model, const MusicFeatureSequence& m, const GroupDanceSequence& d_context) {
  if (m.frames() != d_context.frames) throw ShapeError("m2d_forward: music and context lengths differ");
  Graph<S> g(false);
  Params<S> p{g, model.params(), false};
  Var<S> out = model.forward(p, g.constant(to_matrix<S>(m)), g.constant(to_matrix<S>(d_context)), d_context.dancers);
  return dance_from_matrix<S>(out.value(), d_context.dancers, d_context.fps);
}

/// Teacher-forced Dance2Music pass: predictions for frames 1..T.
template <class S>
MusicFeatureSequence d2m_forward(const Dance2Music<S>& model, const GroupDanceSequence& d, const MusicFeatureSequence& m_context) {
  if (m_context.frames() != d.frames) throw ShapeError("d2m_forward: dance and context lengths differ");
  Graph<S> g(false);
  Params<S> p{g, model.params(), false};
  Var<S> out = model.forward(p, g.constant(to_matrix<S>(d)), g.constant(to_matrix<S>(m_context)), d.dancers);
  return music_from_matrix<S>(out.value(), m_context.fps);
}

/// Autoregressive rollout from one initial pose per dancer. `initial` holds
/// N dancers x 1 frame; the result holds N x horizon predicted frames.
/// Only the Music2Dance block is used.
template <class S>
GroupDanceSequence generate(const Music2Dance<S>& model, const MusicFeatureSequence& m, const GroupDanceSequence& initial,
                            const GenerationConfig& cfg = {}) {
  validate(m);
  const int n = initial.dancers;
  const int horizon = cfg.horizon > 0 ? cfg.horizon : m.frames();
  if (horizon > m.frames()) throw ShapeError("generate: horizon exceeds music length");
  Graph<S> g(false);
  Params<S> p{g, model.params(), false};
  Var<S> memory = model.encode(p, g.constant(to_matrix<S>(m.slice_frames(0, horizon))));
  Mat<S> context(static_cast<Eigen::Index>(n), kPoseDim);
  for (int i = 0; i < n; ++i) context.row(i) = initial.pose(i, 0).template cast<S>();
  GroupDanceSequence out(n, horizon, m.fps);
  for (int t = 0; t < horizon; ++t) {
    const int len = t + 1;
    Var<S> pred = model.decode(p, memory, g.constant(context), n);
    const Mat<S>& pv = pred.value();
    Mat<S> next(static_cast<Eigen::Index>(n) * (len + 1), kPoseDim);
    for (int i = 0; i < n; ++i) {
      const Eigen::Index newest = static_cast<Eigen::Index>(i) * len + t;
      out.pose(i, t) = pv.row(newest).template cast<double>();
      next.middleRows(static_cast<Eigen::Index>(i) * (len + 1), len) = context.middleRows(static_cast<Eigen::Index>(i) * len, len);
      next.row(static_cast<Eigen::Index>(i) * (len + 1) + len) = pv.row(newest);
    }
    context = std::move(next);
  }
  return out;
}

/// Decoder context made of an initial frame followed by a prediction
/// sequence shifted by one: row 0 = initial, row t = pred row t - 1.
inline GroupDanceSequence shift_as_context(const GroupDanceSequence& initial, const GroupDanceSequence& pred) {
  GroupDanceSequence ctx(pred.dancers, pred.frames, pred.fps);
  for (int i = 0; i < pred.dancers; ++i) {
    ctx.pose(i, 0) = initial.pose(i, 0);
    for (int t = 1; t < pred.frames; ++t) ctx.pose(i, t) = pred.pose(i, t - 1);
  }
  return ctx;
}

inline MusicFeatureSequence shift_as_context(const MusicFeatureSequence& initial, const MusicFeatureSequence& pred) {
  MusicFeatureSequence ctx = pred;
  ctx.feats.row(0) = initial.feats.row(0);
  for (int t = 1; t < pred.frames(); ++t) ctx.feats.row(t) = pred.feats.row(t - 1);
  return ctx;
}

/// m -> m2d -> m2d2m, inner Dance2Music pass teacher-forced on m_context.
template <class S>
std::pair<GroupDanceSequence, MusicFeatureSequence> cycle_music(const Music2Dance<S>& m2d_model, const Dance2Music<S>& d2m_model,
                                                                const MusicFeatureSequence& m, const GroupDanceSequence& d_context,
                                                                const MusicFeatureSequence& m_context) {
  GroupDanceSequence m2d = m2d_forward(m2d_model, m, d_context);
  MusicFeatureSequence m2d2m = d2m_forward(d2m_model, m2d, m_context);
  return {std::move(m2d), std::move(m2d2m)};
}

/// d -> d2m -> d2m2d, inner Music2Dance pass teacher-forced on d_context.
template <class S>
std::pair<MusicFeatureSequence, GroupDanceSequence> cycle_dance(const Music2Dance<S>& m2d_model, const Dance2Music<S>& d2m_model,
                                                                const GroupDanceSequence& d, const MusicFeatureSequence& m_context,
                                                                const GroupDanceSequence& d_context) {
  MusicFeatureSequence d2m = d2m_forward(d2m_model, d, m_context);
  GroupDanceSequence d2m2d = m2d_forward(m2d_model, d2m, d_context);
  return {std::move(d2m), std::move(d2m2d)};
}

}  // namespace cohedance
