// Synthetic paired music features and beat-locked group dance.
//
// A clip at `bpm` has a musical beat every P = round(1800 / bpm) frames.
// Each dancer moves with phase u = (t - offset) / P through
//   angle_j(t) = A_j * cos(pi * u / stride)
// so joint speed is proportional to |sin(pi * u / stride)| and vanishes
// exactly on every `stride`-th beat. Root sway follows the same phase.
#pragma once

#include "cohedance/audio.hpp"
#include "cohedance/motion.hpp"
#include "cohedance/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace cohedance {

struct SynthSpec {
  double bpm = 120.0;
  double duration = 2.0;  // seconds
  int dancers = 2;
  double amplitude = 0.4;             // peak joint angle, radians
  std::vector<double> phase_offsets;  // frames, one per dancer; missing entries are 0
  int beat_stride = 2;                // kinematic beat on every stride-th musical beat
  double sway = 0.03;                 // root sway amplitude, meters
  double spacing = 1.0;               // lateral distance between dancers, meters
  double fps = kFps;
  std::uint64_t seed = 0;

  int frames() const { return static_cast<int>(std::lround(duration * fps)); }

  int beat_period() const {
    if (!(bpm > 0.0)) throw std::invalid_argument("synth spec: bpm must be positive");
    return static_cast<int>(std::lround(60.0 * fps / bpm));
  }

  double phase_offset(int dancer) const {
    return dancer < static_cast<int>(phase_offsets.size()) ? phase_offsets[static_cast<std::size_t>(dancer)] : 0.0;
  }

  void validate() const {
    if (!(bpm > 0.0)) throw std::invalid_argument("synth spec: bpm must be positive");
    if (!(duration > 0.0)) throw std::invalid_argument("synth spec: duration must be positive");
    if (dancers < 1) throw std::invalid_argument("synth spec: need at least one dancer");
    if (beat_stride < 1) throw std::invalid_argument("synth spec: beat_stride must be >= 1");
    if (beat_period() < 2) throw std::invalid_argument("synth spec: bpm gives a beat period under 2 frames");
    if (frames() < 1) throw std::invalid_argument("synth spec: duration shorter than one frame");
  }
};

namespace synth_detail {

/// Joints that swing, with their rotation axes.
struct Mover {
  int joint;
  Vec3 axis;
  double weight;
};

inline const std::vector<Mover>& movers() {
  static const std::vector<Mover> m = {
      {1, Vec3(1, 0, 0), 0.6},   {2, Vec3(1, 0, 0), -0.6},  {4, Vec3(1, 0, 0), 0.8},  {5, Vec3(1, 0, 0), 0.8},
      {3, Vec3(0, 0, 1), 0.25},  {6, Vec3(0, 1, 0), 0.3},   {12, Vec3(1, 0, 0), 0.2}, {16, Vec3(0, 0, 1), 1.0},
      {17, Vec3(0, 0, 1), -1.0}, {18, Vec3(0, 1, 0), 0.9},  {19, Vec3(0, 1, 0), -0.9}, {20, Vec3(1, 0, 0), 0.4},
      {21, Vec3(1, 0, 0), 0.4},
  };
  return m;
}

/// Smooth pseudo-random signal: a seeded sum of slow sinusoids.
class SmoothNoise {
 public:
  SmoothNoise(Rng& rng, double fps) {
    for (auto& c : comps_) {
      c[0] = rng.uniform(0.1, 1.0) * 2.0 * std::numbers::pi / fps;  // 0.1 to 1 Hz
      c[1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      c[2] = rng.normal();
    }
  }
  double operator()(int t) const {
    double v = 0.0;
    for (const auto& c : comps_) v += c[2] * std::sin(c[0] * t + c[1]);
    return v / std::sqrt(static_cast<double>(comps_.size()));
  }

 private:
  std::array<std::array<double, 3>, 3> comps_{};
};

}  // namespace synth_detail

/// Click-track feature sequence. beat_onehot fires on multiples of the
/// beat period; the onset envelope pulses there; the tempogram channel for
/// lag L (L = 1..384) holds the autocorrelation of a period-P pulse train.
inline MusicFeatureSequence make_click_music(const SynthSpec& spec) {
  spec.validate();
  const int t_len = spec.frames();
  const int period = spec.beat_period();
  MusicFeatureSequence m(t_len, spec.fps);
  Rng rng(derive_seed(spec.seed, "click_music"));

  std::vector<synth_detail::SmoothNoise> noise;
  const int n_noise = FeatureLayout::mfcc.size() + FeatureLayout::chroma.size();
  noise.reserve(static_cast<std::size_t>(n_noise));
  for (int k = 0; k < n_noise; ++k) noise.emplace_back(rng, spec.fps);

  constexpr auto tg = FeatureLayout::tempogram;
  std::vector<double> tempo_row(static_cast<std::size_t>(tg.size()));
  for (int k = 0; k < tg.size(); ++k) {
    const int lag = k + 1;
    const int r = lag % period;
    const double d = std::min(r, period - r);
    tempo_row[static_cast<std::size_t>(k)] = std::exp(-d * d / 2.0);
  }

  const double two_pi = 2.0 * std::numbers::pi;
  for (int t = 0; t < t_len; ++t) {
    const int r = t % period;
    const double d = std::min(r, period - r);
    const double beat_phase = std::cos(two_pi * t / period);
    for (int k = 0; k < FeatureLayout::mfcc.size(); ++k) {
      double v = 0.3 * noise[static_cast<std::size_t>(k)](t);
      if (k < 4) v += 0.5 * beat_phase / (k + 1);
      m.feats(t, FeatureLayout::mfcc.begin + k) = v;
    }
    for (int k = 0; k < FeatureLayout::chroma.size(); ++k)
      m.feats(t, FeatureLayout::chroma.begin + k) = 0.5 + 0.25 * noise[static_cast<std::size_t>(FeatureLayout::mfcc.size() + k)](t);
    for (int k = 0; k < tg.size(); ++k) m.feats(t, tg.begin + k) = tempo_row[static_cast<std::size_t>(k)];
    m.feats(t, FeatureLayout::onset_env.begin) = std::exp(-d * d / 2.0);
    m.feats(t, FeatureLayout::beat_onehot.begin) = r == 0 ? 1.0 : 0.0;
  }
  // Delta over one frame on each side (edges use one-sided differences).
  for (int t = 0; t < t_len; ++t) {
    const int a = std::max(0, t - 1), b = std::min(t_len - 1, t + 1);
    for (int k = 0; k < FeatureLayout::mfcc.size(); ++k) {
      const double num = m.feats(b, FeatureLayout::mfcc.begin + k) - m.feats(a, FeatureLayout::mfcc.begin + k);
      m.feats(t, FeatureLayout::mfcc_delta.begin + k) = b > a ? num / (b - a) : 0.0;
    }
  }
  return m;
}

/// Group dance whose kinematic beats fall on every beat_stride-th musical
/// beat, shifted per dancer by its phase offset.
inline GroupDanceSequence make_beat_locked_dance(const SynthSpec& spec, const SkeletonDef& skel = SkeletonDef::smpl()) {
  spec.validate();
  skel.validate();
  const int t_len = spec.frames();
  const double period = spec.beat_period();
  GroupDanceSequence seq(spec.dancers, t_len, spec.fps);
  Rng rng(derive_seed(spec.seed, "beat_locked_dance"));
  const auto& movers = synth_detail::movers();
  const double height = skel.rest_foot_drop();

  for (int i = 0; i < spec.dancers; ++i) {
    std::vector<double> gain(movers.size());
    for (auto& g : gain) g = rng.uniform(0.95, 1.05);
    const double lateral = spec.spacing * (i - 0.5 * (spec.dancers - 1));
    for (int t = 0; t < t_len; ++t) {
      const double u = (t - spec.phase_offset(i)) / period;
      const double c = std::cos(std::numbers::pi * u / spec.beat_stride);
      MotionFrame f;
      f.tau = Vec3(lateral + spec.sway * c, height, 0.0);
      for (std::size_t k = 0; k < movers.size(); ++k) {
        const double angle = spec.amplitude * movers[k].weight * gain[k] * c;
        f.theta[static_cast<std::size_t>(movers[k].joint)] = matrix_to_sixd(axis_angle_to_matrix(movers[k].axis * angle));
      }
      seq.set_frame(i, t, f);
    }
  }
  return seq;
}

/// Beat periods (frames) of the tempo classes used for paired datasets.
inline constexpr std::array<int, 8> kTempoPeriods = {10, 12, 14, 16, 18, 20, 24, 30};

struct SynthRanges {
  double min_duration = 2.0;
  double max_duration = 2.0;
  int min_dancers = 2;
  int max_dancers = 2;
  double amplitude = 0.4;
};

struct SynthClip {
  std::string name;
  int tempo_class = 0;
  SynthSpec spec;
  MusicFeatureSequence music;
  GroupDanceSequence dance;
};

/// n pairs cycling through the tempo classes; clip k uses class k mod 8.
inline std::vector<SynthClip> make_paired_dataset(int n, const SynthRanges& ranges, std::uint64_t seed,
                                                  const SkeletonDef& skel = SkeletonDef::smpl()) {
  if (n < 1) throw std::invalid_argument("make_paired_dataset: n must be >= 1");
  Rng rng(derive_seed(seed, "paired_dataset"));
  std::vector<SynthClip> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    SynthClip clip;
    clip.tempo_class = k % static_cast<int>(kTempoPeriods.size());
    SynthSpec& s = clip.spec;
    s.bpm = 60.0 * kFps / kTempoPeriods[static_cast<std::size_t>(clip.tempo_class)];
    s.duration = ranges.min_duration + (ranges.max_duration - ranges.min_duration) * rng.uniform();
    s.duration = std::round(s.duration * kFps) / kFps;
    s.dancers = ranges.min_dancers + static_cast<int>(rng.below(static_cast<std::uint64_t>(ranges.max_dancers - ranges.min_dancers + 1)));
    s.amplitude = ranges.amplitude;
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(k));
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%04d", k);
    clip.name = buf;
    clip.music = make_click_music(s);
    clip.dance = make_beat_locked_dance(s, skel);
    out.push_back(std::move(clip));
  }
  return out;
}

}  // namespace cohedance
