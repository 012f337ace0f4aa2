// Contrastive music/dance embedding model used by the global metrics, and
// corpus-level evaluation.
#pragma once

#include "cohedance/audio.hpp"
#include "cohedance/autodiff.hpp"
#include "cohedance/generators.hpp"
#include "cohedance/metrics.hpp"
#include "cohedance/motion.hpp"
#include "cohedance/nn.hpp"
#include "cohedance/optim.hpp"
#include "cohedance/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cohedance {

struct RetrievalConfig {
  AttentionConfig attn{32, 4, 2};
  int layers = 1;
  int embed_dim = 32;
  double temperature = 0.1;
  int segment = 60;  // frames per training crop
  int steps = 300;
  int batch = 8;
  double lr = 2e-3;
  std::uint64_t seed = 0;
};

/// Dance tower input: pose with each dancer's root translation centred on
/// its clip mean, followed by the per-second forward difference of the pose
/// (the last frame repeats the previous difference); 2 * 147 columns.
inline Mat<float> dance_tower_input(const GroupDanceSequence& d) {
  Mat<float> x(d.data.rows(), 2 * kPoseDim);
  for (int i = 0; i < d.dancers; ++i) {
    const Eigen::RowVector3d mean_root = d.data.block(d.row_index(i, 0), 0, d.frames, kRootDim).colwise().mean();
    for (int t = 0; t < d.frames; ++t) {
      const auto r = d.row_index(i, t);
      x.block(r, 0, 1, kPoseDim) = d.data.row(r).cast<float>();
      x.block(r, 0, 1, kRootDim) = (d.data.block(r, 0, 1, kRootDim) - mean_root).cast<float>();
      if (d.frames < 2) {
        x.block(r, kPoseDim, 1, kPoseDim).setZero();
        continue;
      }
      const int a = t + 1 < d.frames ? t : t - 1;
      x.block(r, kPoseDim, 1, kPoseDim) = ((d.data.row(d.row_index(i, a + 1)) - d.data.row(d.row_index(i, a))) * d.fps).cast<float>();
    }
  }
  return x;
}

class RetrievalModel {
 public:
  RetrievalModel() = default;
  explicit RetrievalModel(const RetrievalConfig& cfg) : config_(cfg) {
    cfg.attn.validate();
    Rng rng(derive_seed(cfg.seed, "retrieval"));
    const int c = cfg.attn.model_dim;
    init::linear(params_, "ret.music.in", kMusicDim, c, rng);
    init::linear(params_, "ret.dance.in", 2 * kPoseDim, c, rng);
    for (int i = 0; i < cfg.layers; ++i) {
      init::self_layer(params_, "ret.music.L" + std::to_string(i), cfg.attn, rng);
      init::self_layer(params_, "ret.dance.L" + std::to_string(i) + ".spatial", cfg.attn, rng);
      init::self_layer(params_, "ret.dance.L" + std::to_string(i) + ".temporal", cfg.attn, rng);
    }
    init::layer_norm(params_, "ret.music.ln", c);
    init::linear(params_, "ret.music.proj", c, cfg.embed_dim, rng);
    init::linear(params_, "ret.dance.proj", c, cfg.embed_dim, rng);
  }

  const RetrievalConfig& config() const { return config_; }
  ParamStore<float>& params() { return params_; }
  const ParamStore<float>& params() const { return params_; }

  /// 1 x E unit vector.
  Var<float> music_tower(const Params<float>& p, const MusicFeatureSequence& m) const {
    Var<float> x = gen_detail::add_positions(linear(p, "ret.music.in", p.graph.constant(to_matrix<float>(m))), 1);
    for (int i = 0; i < config_.layers; ++i) x = temporal_self_layer(p, "ret.music.L" + std::to_string(i), x, config_.attn, false);
    Var<float> pooled = layer_norm(p, "ret.music.ln", mean_rows(x));
    return ad::l2_normalize_rows(linear(p, "ret.music.proj", pooled));
  }

  /// 1 x E unit vector; pooled over time and dancers. The pooled vector is
  /// not normalized, so overall motion energy survives into the projection.
  Var<float> dance_tower(const Params<float>& p, const GroupDanceSequence& d) const {
    Var<float> x = gen_detail::add_positions(linear(p, "ret.dance.in", p.graph.constant(dance_tower_input(d))), d.dancers);
    for (int i = 0; i < config_.layers; ++i) {
      const std::string base = "ret.dance.L" + std::to_string(i);
      x = spatial_layer(p, base + ".spatial", x, config_.attn, d.dancers);
      x = temporal_self_layer(p, base + ".temporal", x, config_.attn, false, d.dancers);
    }
    Var<float> pooled = mean_rows(x);
    return ad::l2_normalize_rows(linear(p, "ret.dance.proj", pooled));
  }

  /// Clip embeddings average the tower output over windows of the training
  /// segment length (half-overlapping, last window flush with the end) and
  /// renormalize.
  Eigen::RowVectorXd embed_music(const MusicFeatureSequence& m) const {
    return windowed(m.frames(), [&](int start, int len) {
      Graph<float> g(false);
      Params<float> p{g, params_, false};
      return Eigen::RowVectorXd(music_tower(p, m.slice_frames(start, len)).value().row(0).cast<double>());
    });
  }

  Eigen::RowVectorXd embed_dance(const GroupDanceSequence& d) const {
    return windowed(d.frames, [&](int start, int len) {
      Graph<float> g(false);
      Params<float> p{g, params_, false};
      return Eigen::RowVectorXd(dance_tower(p, d.slice_frames(start, len)).value().row(0).cast<double>());
    });
  }

 private:
  template <class F>
  Eigen::RowVectorXd windowed(int frames, F&& embed) const {
    const int len = std::min(frames, std::max(1, config_.segment));
    const int stride = std::max(1, len / 2);
    std::vector<int> starts;
    for (int s = 0; s + len <= frames; s += stride) starts.push_back(s);
    if (starts.back() + len < frames) starts.push_back(frames - len);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(config_.embed_dim);
    for (int s : starts) acc += embed(s, len);
    return acc / std::max(acc.norm(), 1e-12);
  }

  RetrievalConfig config_;
  ParamStore<float> params_;
};

class DegenerateBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stacks 1 x E rows into a B x E matrix.
template <class S>
Var<S> stack_rows(const std::vector<Var<S>>& rows) {
  const int b = static_cast<int>(rows.size());
  Var<S> out{};
  for (int k = 0; k < b; ++k) {
    std::vector<int> idx(static_cast<std::size_t>(b), -1);
    idx[static_cast<std::size_t>(k)] = 0;
    Var<S> placed = ad::gather_rows(rows[static_cast<std::size_t>(k)], std::move(idx));
    out = k == 0 ? placed : ad::add(out, placed);
  }
  return out;
}

/// Symmetric InfoNCE over a batch of matched rows: the mean of the
/// music->dance and dance->music cross-entropies of cos / temperature.
template <class S>
Var<S> contrastive_loss(Var<S> music, Var<S> dance, double temperature) {
  if (music.rows() < 2) throw DegenerateBatchError("contrastive loss needs at least 2 pairs per batch");
  Var<S> logits = ad::scale(ad::matmul(music, ad::transpose(dance)), static_cast<S>(1.0 / temperature));
  return ad::scale(ad::add(ad::cross_entropy_diagonal(logits), ad::cross_entropy_diagonal(ad::transpose(logits))), S(0.5));
}

struct RetrievalPair {
  MusicFeatureSequence music;
  GroupDanceSequence dance;
};

/// Crops of `len` frames (whole clip when shorter) with independent start
/// frames for music and dance, so matching has to rely on clip-level
/// content rather than on the shared beat phase.
inline RetrievalPair random_segment(const RetrievalPair& p, int len, Rng& rng) {
  auto start = [&](int t) { return t <= len ? 0 : static_cast<int>(rng.below(static_cast<std::uint64_t>(t - len + 1))); };
  const int sm = start(p.music.frames()), sd = start(p.dance.frames);
  return {p.music.slice_frames(sm, std::min(len, p.music.frames())), p.dance.slice_frames(sd, std::min(len, p.dance.frames))};
}

inline double batch_contrastive_loss(const RetrievalModel& model, const std::vector<RetrievalPair>& batch) {
  Graph<float> g(false);
  Params<float> p{g, model.params(), false};
  std::vector<Var<float>> mus, dan;
  for (const auto& b : batch) {
    mus.push_back(model.music_tower(p, b.music));
    dan.push_back(model.dance_tower(p, b.dance));
  }
  return contrastive_loss(stack_rows(mus), stack_rows(dan), model.config().temperature).scalar();
}

/// Trains with Adam on random batches of random crops.
inline RetrievalModel train_retrieval(const std::vector<RetrievalPair>& data, const RetrievalConfig& cfg,
                                      const std::function<void(int, double)>& on_step = {}) {
  if (data.size() < 2 || cfg.batch < 2) throw DegenerateBatchError("train_retrieval: need at least 2 pairs per batch");
  RetrievalModel model(cfg);
  Adam<float> opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 1.0});
  Rng rng(derive_seed(cfg.seed, "retrieval_batches"));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t b = std::min(order.size(), static_cast<std::size_t>(cfg.batch));
  for (int step = 0; step < cfg.steps; ++step) {
    rng.shuffle(order.begin(), order.end());
    Graph<float> g(true);
    Params<float> p{g, model.params(), true};
    std::vector<Var<float>> mus, dan;
    for (std::size_t k = 0; k < b; ++k) {
      const RetrievalPair crop = random_segment(data[order[k]], cfg.segment, rng);
      mus.push_back(model.music_tower(p, crop.music));
      dan.push_back(model.dance_tower(p, crop.dance));
    }
    Var<float> loss = contrastive_loss(stack_rows(mus), stack_rows(dan), cfg.temperature);
    g.backward(loss);
    opt.step(model.params(), g.param_grads(model.params()));
    if (on_step) on_step(step, static_cast<double>(loss.scalar()));
  }
  return model;
}

/// Fraction of music queries whose nearest dance (cosine) is its own pair.
inline double top1_accuracy(const RetrievalModel& model, const std::vector<RetrievalPair>& pairs) {
  const int n = static_cast<int>(pairs.size());
  Eigen::MatrixXd em(n, model.config().embed_dim), ed(n, model.config().embed_dim);
  for (int i = 0; i < n; ++i) {
    em.row(i) = model.embed_music(pairs[static_cast<std::size_t>(i)].music);
    ed.row(i) = model.embed_dance(pairs[static_cast<std::size_t>(i)].dance);
  }
  const Eigen::MatrixXd sim = em * ed.transpose();
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    sim.row(i).maxCoeff(&best);
    hits += best == i ? 1 : 0;
  }
  return static_cast<double>(hits) / n;
}

// ---------------------------------------------------------------------------
// Corpus evaluation

struct EvalClip {
  std::string name;
  MusicFeatureSequence music;
  GroupDanceSequence reference;
  GroupDanceSequence generated;
};

struct ClipMetrics {
  std::string name;
  double m_dist = 0.0;
  double mm_dist = 0.0;
  double mda = 0.0;
  double gda = 0.0;  // NaN for single-dancer clips
};

struct CorpusEvaluation {
  MetricReport report;
  std::vector<ClipMetrics> clips;
};

inline CorpusEvaluation evaluate_corpus(const RetrievalModel& model, const std::vector<EvalClip>& clips, const SkeletonDef& skel,
                                        const AlignmentOptions& align = {}) {
  if (clips.size() < 2) throw MetricError("evaluate: need at least 2 clips");
  const int n = static_cast<int>(clips.size()), e = model.config().embed_dim;
  Eigen::MatrixXd em(n, e), ref(n, e), gen(n, e);
  CorpusEvaluation out;
  double mda_sum = 0.0, gda_sum = 0.0;
  int gda_count = 0;
  for (int i = 0; i < n; ++i) {
    const EvalClip& c = clips[static_cast<std::size_t>(i)];
    em.row(i) = model.embed_music(c.music);
    ref.row(i) = model.embed_dance(c.reference);
    gen.row(i) = model.embed_dance(c.generated);
    ClipMetrics cm;
    cm.name = c.name;
    cm.m_dist = (gen.row(i) - ref.row(i)).norm();
    cm.mm_dist = (em.row(i) - gen.row(i)).norm();
    cm.mda = mda(c.generated, skel, music_beats(c.music), align);
    mda_sum += cm.mda;
    if (c.generated.dancers >= 2) {
      cm.gda = gda(c.generated, skel, align);
      gda_sum += cm.gda;
      ++gda_count;
    } else {
      cm.gda = std::numeric_limits<double>::quiet_NaN();
    }
    out.clips.push_back(cm);
  }
  out.report.fid = fid(ref, gen);
  out.report.m_dist = m_dist(gen, ref);
  out.report.mm_dist = mm_dist(em, gen);
  out.report.div = diversity(gen);
  out.report.mda = mda_sum / n;
  out.report.gda = gda_count > 0 ? gda_sum / gda_count : 0.0;
  out.report.clips = n;
  return out;
}

}  // namespace cohedance
