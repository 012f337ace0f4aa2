// Losses, scheduled sampling and the alternating adversarial training loop.
//
//   L_rec = |d2m - m| + |m2d - d| + |vel(m2d) - vel(d)|
//   L_cyc = |m2d2m - m| + |d2m2d - d| + |vel(d2m2d) - vel(d)|
//   L_D   = -[log D_M(m) + log(1 - D_M(d2m)) + log D_D(d) + log(1 - D_D(m2d))]
//   L_fd  = -[log D_M(d2m) + log D_D(m2d)]        (non-saturating)
//   L_G   = L_rec + L_cyc + L_fd
// |.| is the mean absolute error; vel is the forward-difference root
// velocity in m/s. Discriminator probabilities are clamped to [eps, 1-eps].
#pragma once

#include "cohedance/audio.hpp"
#include "cohedance/autodiff.hpp"
#include "cohedance/discriminators.hpp"
#include "cohedance/generators.hpp"
#include "cohedance/motion.hpp"
#include "cohedance/optim.hpp"
#include "cohedance/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cohedance {

inline constexpr double kProbEps = 1e-7;

struct LossReport {
  long step = 0;
  double l_rec = 0.0;
  double l_cyc = 0.0;
  double l_fd = 0.0;
  double l_g = 0.0;
  double l_d = 0.0;
  double p = 0.0;

  bool finite() const {
    return std::isfinite(l_rec) && std::isfinite(l_cyc) && std::isfinite(l_fd) && std::isfinite(l_g) && std::isfinite(l_d);
  }
};

inline std::string loss_csv_header() { return "step,l_rec,l_cyc,l_fd,l_g,l_d,p"; }

inline std::string loss_csv_row(const LossReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << r.step << ',' << r.l_rec << ',' << r.l_cyc << ',' << r.l_fd << ',' << r.l_g << ',' << r.l_d << ',' << r.p;
  return os.str();
}

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, LossReport report) : std::runtime_error(what), report_(report) {}
  const LossReport& report() const { return report_; }

 private:
  LossReport report_;
};

struct ScheduleState {
  long step = 0;
  long total_steps = 1;
};

/// Fraction of decoder context frames taken from model predictions:
/// min(1, step / total).
inline double scheduled_ratio(const ScheduleState& s) {
  if (s.total_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(s.step) / static_cast<double>(s.total_steps));
}

/// Per-frame choice mask: true where the frame comes from the prediction.
inline std::vector<bool> draw_mix_mask(int frames, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("mix ratio must lie in [0, 1]");
  std::vector<bool> mask(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) mask[static_cast<std::size_t>(t)] = p >= 1.0 ? true : (p <= 0.0 ? false : rng.bernoulli(p));
  return mask;
}

/// Frame-wise mix of ground-truth and predicted context. A chosen frame is
/// taken from the prediction for every dancer at once.
inline GroupDanceSequence mix_inputs(const GroupDanceSequence& gt, const GroupDanceSequence& pred, double p, Rng& rng) {
  if (gt.dancers != pred.dancers || gt.frames != pred.frames) throw ShapeError("mix_inputs: shape mismatch");
  const auto mask = draw_mix_mask(gt.frames, p, rng);
  GroupDanceSequence out = gt;
  for (int t = 0; t < gt.frames; ++t)
    if (mask[static_cast<std::size_t>(t)])
      for (int i = 0; i < gt.dancers; ++i) out.pose(i, t) = pred.pose(i, t);
  return out;
}

inline MusicFeatureSequence mix_inputs(const MusicFeatureSequence& gt, const MusicFeatureSequence& pred, double p, Rng& rng) {
  if (gt.frames() != pred.frames()) throw ShapeError("mix_inputs: shape mismatch");
  const auto mask = draw_mix_mask(gt.frames(), p, rng);
  MusicFeatureSequence out = gt;
  for (int t = 0; t < gt.frames(); ++t)
    if (mask[static_cast<std::size_t>(t)]) out.feats.row(t) = pred.feats.row(t);
  return out;
}

// ---------------------------------------------------------------------------
// Graph-level losses

/// Root-velocity L1 between two dancer-major (N * T) x 147 sequences.
template <class S>
Var<S> root_velocity_l1(Var<S> a, Var<S> b, int dancers, double fps) {
  const int frames = static_cast<int>(a.rows()) / dancers;
  if (frames < 2) throw MotionError("root velocity needs at least two frames");
  std::vector<int> next, prev;
  for (int i = 0; i < dancers; ++i)
    for (int t = 0; t + 1 < frames; ++t) {
      next.push_back(i * frames + t + 1);
      prev.push_back(i * frames + t);
    }
  auto vel = [&](Var<S> x) {
    Var<S> root = ad::slice_cols(x, 0, kRootDim);
    return ad::scale(ad::sub(ad::gather_rows(root, next), ad::gather_rows(root, prev)), static_cast<S>(fps));
  };
  return ad::l1_mean(vel(a), vel(b));
}

struct LossWeights {
  double rec = 1.0;
  double cyc = 1.0;
  double fd = 1.0;
  double velocity = 1.0;
};

template <class S>
Var<S> dance_l1(Var<S> pred, Var<S> target, int dancers, double fps, double velocity_weight) {
  Var<S> l = ad::l1_mean(pred, target);
  if (velocity_weight == 0.0) return l;
  return ad::add(l, ad::scale(root_velocity_l1(pred, target, dancers, fps), static_cast<S>(velocity_weight)));
}

template <class S>
Var<S> loss_rec(Var<S> m, Var<S> d, Var<S> m2d, Var<S> d2m, int dancers, double fps, double velocity_weight = 1.0) {
  return ad::add(ad::l1_mean(d2m, m), dance_l1(m2d, d, dancers, fps, velocity_weight));
}

template <class S>
Var<S> loss_cyc(Var<S> m, Var<S> d, Var<S> m2d2m, Var<S> d2m2d, int dancers, double fps, double velocity_weight = 1.0) {
  return ad::add(ad::l1_mean(m2d2m, m), dance_l1(d2m2d, d, dancers, fps, velocity_weight));
}

template <class S>
Var<S> clamped_log(Var<S> prob) {
  return ad::log(ad::clamp(prob, static_cast<S>(kProbEps), static_cast<S>(1.0 - kProbEps)));
}

template <class S>
Var<S> clamped_log1m(Var<S> prob) {
  return ad::log(ad::one_minus(ad::clamp(prob, static_cast<S>(kProbEps), static_cast<S>(1.0 - kProbEps))));
}

/// Binary cross-entropy over the four discriminator outputs.
template <class S>
Var<S> loss_disc(Var<S> dm_real, Var<S> dm_fake, Var<S> dd_real, Var<S> dd_fake) {
  Var<S> s = ad::add(ad::add(clamped_log(dm_real), clamped_log1m(dm_fake)), ad::add(clamped_log(dd_real), clamped_log1m(dd_fake)));
  return ad::scale(s, S(-1));
}

/// Generator adversarial term. The default is -[log D(fake)]; with
/// `saturating` it is the literal log(1 - D(fake)) form.
template <class S>
Var<S> loss_fool(Var<S> dm_fake, Var<S> dd_fake, bool saturating = false) {
  if (saturating) return ad::add(clamped_log1m(dm_fake), clamped_log1m(dd_fake));
  return ad::scale(ad::add(clamped_log(dm_fake), clamped_log(dd_fake)), S(-1));
}

// ---------------------------------------------------------------------------
// Value-level losses (double precision)

struct RecTerms {
  double music = 0.0;
  double dance = 0.0;
  double velocity = 0.0;
  double total = 0.0;
};

namespace train_detail {

inline RecTerms l1_terms(const MusicFeatureSequence& m, const GroupDanceSequence& d, const GroupDanceSequence& dance_pred,
                         const MusicFeatureSequence& music_pred, double velocity_weight) {
  if (m.feats.rows() != music_pred.feats.rows() || m.feats.cols() != music_pred.feats.cols())
    throw ShapeError("loss: music shape mismatch");
  if (d.dancers != dance_pred.dancers || d.frames != dance_pred.frames) throw ShapeError("loss: dance shape mismatch");
  Graph<double> g(false);
  Var<double> dp = g.constant(dance_pred.data), dt = g.constant(d.data);
  RecTerms r;
  r.music = ad::l1_mean(g.constant(music_pred.feats), g.constant(m.feats)).scalar();
  r.dance = ad::l1_mean(dp, dt).scalar();
  r.velocity = d.frames >= 2 ? root_velocity_l1(dp, dt, d.dancers, d.fps).scalar() : 0.0;
  r.total = r.music + r.dance + velocity_weight * r.velocity;
  return r;
}

}  // namespace train_detail

inline RecTerms loss_rec(const MusicFeatureSequence& m, const GroupDanceSequence& d, const GroupDanceSequence& m2d,
                         const MusicFeatureSequence& d2m, double velocity_weight = 1.0) {
  return train_detail::l1_terms(m, d, m2d, d2m, velocity_weight);
}

inline RecTerms loss_cyc(const MusicFeatureSequence& m, const GroupDanceSequence& d, const MusicFeatureSequence& m2d2m,
                         const GroupDanceSequence& d2m2d, double velocity_weight = 1.0) {
  return train_detail::l1_terms(m, d, d2m2d, m2d2m, velocity_weight);
}

inline double loss_disc_from_probs(double dm_real, double dm_fake, double dd_real, double dd_fake) {
  Graph<double> g(false);
  auto c = [&](double v) { return g.constant(Mat<double>::Constant(1, 1, v)); };
  return loss_disc(c(dm_real), c(dm_fake), c(dd_real), c(dd_fake)).scalar();
}

inline double loss_fool_from_probs(double dm_fake, double dd_fake, bool saturating = false) {
  Graph<double> g(false);
  auto c = [&](double v) { return g.constant(Mat<double>::Constant(1, 1, v)); };
  return loss_fool(c(dm_fake), c(dd_fake), saturating).scalar();
}

template <class S>
double loss_disc(const MusicDiscriminator<S>& dm, const DanceDiscriminator<S>& dd, const MusicFeatureSequence& m,
                 const GroupDanceSequence& d, const GroupDanceSequence& m2d, const MusicFeatureSequence& d2m) {
  return loss_disc_from_probs(d_music(dm, m), d_music(dm, d2m), d_dance(dd, d), d_dance(dd, m2d));
}

template <class S>
double loss_fool(const MusicDiscriminator<S>& dm, const DanceDiscriminator<S>& dd, const GroupDanceSequence& m2d,
                 const MusicFeatureSequence& d2m, bool saturating = false) {
  return loss_fool_from_probs(d_music(dm, d2m), d_dance(dd, m2d), saturating);
}

// ---------------------------------------------------------------------------
// Training loop

/// A paired clip: music and dance share the same T' >= 2 frames.
struct TrainingPair {
  std::string name;
  MusicFeatureSequence music;
  GroupDanceSequence dance;
};

/// Teacher-forcing view of a clip with T = T' - 1: targets are frames
/// 1..T'-1, contexts are frames 0..T'-2.
struct ShiftedPair {
  MusicFeatureSequence m_target;
  MusicFeatureSequence m_context;
  GroupDanceSequence d_target;
  GroupDanceSequence d_context;

  int dancers() const { return d_target.dancers; }
  int frames() const { return d_target.frames; }
};

inline ShiftedPair make_shifted(const TrainingPair& pair) {
  validate(pair.music);
  validate(pair.dance);
  const int t = pair.dance.frames;
  if (pair.music.frames() != t) throw ShapeError("training pair: music and dance lengths differ");
  if (t < 3) throw ShapeError("training pair: need at least 3 frames");
  return ShiftedPair{pair.music.slice_frames(1, t - 1), pair.music.slice_frames(0, t - 1), pair.dance.slice_frames(1, t - 1),
                     pair.dance.slice_frames(0, t - 1)};
}

struct TrainConfig {
  int epochs = 1;
  int batch_size = 4;
  double lr_g = 1e-3;
  double lr_d = 1e-4;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  long schedule_total = 1000;
  LossWeights weights;
  bool cycle = true;
  bool adversarial = true;
  bool scheduled_sampling = true;
  bool saturating_fool = false;
};

template <class S>
struct GeneratorLossTerms {
  Var<S> rec;
  Var<S> cyc;
  Var<S> fd;
  Var<S> total;
  std::vector<Var<S>> m2d;  // generator outputs, one per item
  std::vector<Var<S>> d2m;
  std::vector<Mat<S>> m2d_values;  // detached copies of the same
  std::vector<Mat<S>> d2m_values;
};

template <class S>
struct ModelSet {
  Music2Dance<S> m2d;
  Dance2Music<S> d2m;
  MusicDiscriminator<S> disc_music;
  DanceDiscriminator<S> disc_dance;

  ModelSet() = default;
  ModelSet(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg, std::uint64_t seed)
      : m2d(gcfg, derive_seed(seed, "g_m2d")),
        d2m(gcfg, derive_seed(seed, "g_d2m")),
        disc_music(dcfg, derive_seed(seed, "d_music")),
        disc_dance(dcfg, derive_seed(seed, "d_dance")) {}
};

/// Reconstruction and cycle terms for a batch, averaged over items. The
/// adversarial term is added by add_fool_term once the discriminators are
/// in their final state for the step.
template <class S>
GeneratorLossTerms<S> generator_losses(Graph<S>& g, const ModelSet<S>& models, const std::vector<ShiftedPair>& batch,
                                       const TrainConfig& cfg) {
  Params<S> pm2d{g, models.m2d.params(), true};
  Params<S> pd2m{g, models.d2m.params(), true};
  const S inv_b = S(1) / static_cast<S>(batch.size());
  GeneratorLossTerms<S> out;
  Var<S> rec{}, cyc{};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ShiftedPair& item = batch[i];
    const int n = item.dancers();
    const double fps = item.d_target.fps;
    Var<S> m = g.constant(to_matrix<S>(item.m_target));
    Var<S> d = g.constant(to_matrix<S>(item.d_target));
    Var<S> m_ctx = g.constant(to_matrix<S>(item.m_context));
    Var<S> d_ctx = g.constant(to_matrix<S>(item.d_context));
    Var<S> m2d = models.m2d.forward(pm2d, m, d_ctx, n);
    Var<S> d2m = models.d2m.forward(pd2m, d, m_ctx, n);
    out.m2d.push_back(m2d);
    out.d2m.push_back(d2m);
    out.m2d_values.push_back(m2d.value());
    out.d2m_values.push_back(d2m.value());
    Var<S> r = loss_rec(m, d, m2d, d2m, n, fps, cfg.weights.velocity);
    rec = i == 0 ? r : ad::add(rec, r);
    if (cfg.cycle) {
      Var<S> m2d2m = models.d2m.forward(pd2m, m2d, m_ctx, n);
      Var<S> d2m2d = models.m2d.forward(pm2d, d2m, d_ctx, n);
      Var<S> c = loss_cyc(m, d, m2d2m, d2m2d, n, fps, cfg.weights.velocity);
      cyc = i == 0 ? c : ad::add(cyc, c);
    }
  }
  out.rec = ad::scale(rec, inv_b * static_cast<S>(cfg.weights.rec));
  out.cyc = cfg.cycle ? ad::scale(cyc, inv_b * static_cast<S>(cfg.weights.cyc)) : g.constant(Mat<S>::Zero(1, 1));
  out.fd = g.constant(Mat<S>::Zero(1, 1));
  out.total = ad::add(out.rec, out.cyc);
  return out;
}

/// Adds L_fd to `terms` using frozen discriminators (parameters enter the
/// graph as constants, so only generator parameters receive gradients).
template <class S>
void add_fool_term(Graph<S>& g, const ModelSet<S>& models, const std::vector<ShiftedPair>& batch, GeneratorLossTerms<S>& terms,
                   const TrainConfig& cfg) {
  Params<S> pdm{g, models.disc_music.params(), false};
  Params<S> pdd{g, models.disc_dance.params(), false};
  Var<S> fd{};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var<S> pm = models.disc_music.probability(pdm, terms.d2m[i], 1);
    Var<S> pd = models.disc_dance.probability(pdd, terms.m2d[i], batch[i].dancers());
    Var<S> f = loss_fool(pm, pd, cfg.saturating_fool);
    fd = i == 0 ? f : ad::add(fd, f);
  }
  terms.fd = ad::scale(fd, static_cast<S>(cfg.weights.fd) / static_cast<S>(batch.size()));
  terms.total = ad::add(ad::add(terms.rec, terms.cyc), terms.fd);
}

/// L_D for a batch with generator outputs supplied as detached values.
template <class S>
Var<S> discriminator_loss(Graph<S>& g, const ModelSet<S>& models, const std::vector<ShiftedPair>& batch,
                          const std::vector<Mat<S>>& m2d_values, const std::vector<Mat<S>>& d2m_values) {
  Params<S> pdm{g, models.disc_music.params(), true};
  Params<S> pdd{g, models.disc_dance.params(), true};
  Var<S> total{};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int n = batch[i].dancers();
    Var<S> dm_real = models.disc_music.probability(pdm, g.constant(to_matrix<S>(batch[i].m_target)), 1);
    Var<S> dm_fake = models.disc_music.probability(pdm, g.constant(d2m_values[i]), 1);
    Var<S> dd_real = models.disc_dance.probability(pdd, g.constant(to_matrix<S>(batch[i].d_target)), n);
    Var<S> dd_fake = models.disc_dance.probability(pdd, g.constant(m2d_values[i]), n);
    Var<S> l = loss_disc(dm_real, dm_fake, dd_real, dd_fake);
    total = i == 0 ? l : ad::add(total, l);
  }
  return ad::scale(total, S(1) / static_cast<S>(batch.size()));
}

template <class S>
class Trainer {
 public:
  Trainer(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg, const TrainConfig& cfg)
      : cfg_(cfg),
        models_(gcfg, dcfg, cfg.seed),
        opt_m2d_(AdamConfig{cfg.lr_g, 0.9, 0.999, 1e-8, cfg.grad_clip}),
        opt_d2m_(AdamConfig{cfg.lr_g, 0.9, 0.999, 1e-8, cfg.grad_clip}),
        opt_dm_(AdamConfig{cfg.lr_d, 0.9, 0.999, 1e-8, cfg.grad_clip}),
        opt_dd_(AdamConfig{cfg.lr_d, 0.9, 0.999, 1e-8, cfg.grad_clip}),
        rng_(derive_seed(cfg.seed, "scheduled_sampling")),
        shuffle_rng_(derive_seed(cfg.seed, "batch_order")) {
    schedule_.total_steps = cfg.schedule_total;
  }

  ModelSet<S>& models() { return models_; }
  const ModelSet<S>& models() const { return models_; }
  const ScheduleState& schedule() const { return schedule_; }
  const TrainConfig& config() const { return cfg_; }

  /// One discriminator update on L_D (generator outputs detached), then
  /// one generator update on L_G, then the schedule advances.
  LossReport train_step(const std::vector<TrainingPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("train_step: empty batch");
    LossReport report;
    report.step = schedule_.step;
    report.p = cfg_.scheduled_sampling ? scheduled_ratio(schedule_) : 0.0;

    std::vector<ShiftedPair> batch;
    batch.reserve(pairs.size());
    for (const auto& pr : pairs) batch.push_back(make_shifted(pr));
    if (report.p > 0.0) {
      for (auto& item : batch) {
        const GroupDanceSequence pred_d = m2d_forward(models_.m2d, item.m_target, item.d_context);
        const MusicFeatureSequence pred_m = d2m_forward(models_.d2m, item.d_target, item.m_context);
        item.d_context = mix_inputs(item.d_context, shift_as_context(item.d_context, pred_d), report.p, rng_);
        item.m_context = mix_inputs(item.m_context, shift_as_context(item.m_context, pred_m), report.p, rng_);
      }
    }

    Graph<S> g(true);
    GeneratorLossTerms<S> terms = generator_losses(g, models_, batch, cfg_);
    report.l_rec = static_cast<double>(terms.rec.scalar());
    report.l_cyc = static_cast<double>(terms.cyc.scalar());

    if (cfg_.adversarial) {
      Graph<S> gd(true);
      Var<S> ld = discriminator_loss(gd, models_, batch, terms.m2d_values, terms.d2m_values);
      report.l_d = static_cast<double>(ld.scalar());
      if (!std::isfinite(report.l_d)) throw TrainingAborted("non-finite discriminator loss at step " + std::to_string(report.step), report);
      gd.backward(ld);
      opt_dm_.step(models_.disc_music.params(), gd.param_grads(models_.disc_music.params()));
      opt_dd_.step(models_.disc_dance.params(), gd.param_grads(models_.disc_dance.params()));

      add_fool_term(g, models_, batch, terms, cfg_);
    }
    report.l_fd = static_cast<double>(terms.fd.scalar());
    report.l_g = report.l_rec + report.l_cyc + report.l_fd;
    if (!report.finite()) throw TrainingAborted("non-finite loss at step " + std::to_string(report.step), report);

    g.backward(terms.total);
    opt_m2d_.step(models_.m2d.params(), g.param_grads(models_.m2d.params()));
    opt_d2m_.step(models_.d2m.params(), g.param_grads(models_.d2m.params()));
    ++schedule_.step;
    return report;
  }

  /// Runs cfg.epochs passes over `data` in seeded shuffled batches.
  std::vector<LossReport> fit(const std::vector<TrainingPair>& data, const std::function<void(const LossReport&)>& on_step = {}) {
    std::vector<LossReport> log;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg_.batch_size));
    for (int e = 0; e < cfg_.epochs; ++e) {
      shuffle_rng_.shuffle(order.begin(), order.end());
      for (std::size_t start = 0; start < order.size(); start += bs) {
        std::vector<TrainingPair> batch;
        for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(data[order[k]]);
        log.push_back(train_step(batch));
        if (on_step) on_step(log.back());
      }
    }
    return log;
  }

 private:
  TrainConfig cfg_;
  ModelSet<S> models_;
  Adam<S> opt_m2d_, opt_d2m_, opt_dm_, opt_dd_;
  ScheduleState schedule_;
  Rng rng_;
  Rng shuffle_rng_;
};

}  // namespace cohedance
