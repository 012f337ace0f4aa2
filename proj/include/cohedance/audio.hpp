// Per-frame music features on the 30 fps motion clock.
//
// Rows are 438 wide: MFCC(20), MFCC delta(20), chroma(12), tempogram(384),
// onset envelope(1), beat one-hot(1). The hop is sample_rate / 30, so one
// feature row covers exactly one motion frame.
#pragma once

#include "cohedance/autodiff.hpp"
#include "cohedance/motion.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cohedance {

inline constexpr int kMusicDim = 438;

struct ChannelRange {
  int begin;
  int end;
  constexpr int size() const { return end - begin; }
};

struct FeatureLayout {
  static constexpr ChannelRange mfcc{0, 20};
  static constexpr ChannelRange mfcc_delta{20, 40};
  static constexpr ChannelRange chroma{40, 52};
  static constexpr ChannelRange tempogram{52, 436};
  static constexpr ChannelRange onset_env{436, 437};
  static constexpr ChannelRange beat_onehot{437, 438};

  static constexpr std::array<ChannelRange, 6> ordered() {
    return {mfcc, mfcc_delta, chroma, tempogram, onset_env, beat_onehot};
  }
};

static_assert(FeatureLayout::beat_onehot.end == kMusicDim);

class AudioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MusicFeatureSequence {
  double fps = kFps;
  Mat<double> feats;  // T x 438

  MusicFeatureSequence() = default;
  MusicFeatureSequence(int t, double rate = kFps) : fps(rate), feats(Mat<double>::Zero(t, kMusicDim)) {}

  int frames() const { return static_cast<int>(feats.rows()); }

  MusicFeatureSequence slice_frames(int start, int count) const {
    if (start < 0 || count < 1 || start + count > frames()) throw AudioError("slice_frames: range out of bounds");
    MusicFeatureSequence out;
    out.fps = fps;
    out.feats = feats.middleRows(start, count);
    return out;
  }
};

inline void validate(const MusicFeatureSequence& m) {
  if (m.feats.cols() != kMusicDim) throw AudioError("music features must be 438 wide");
  if (m.feats.rows() < 1) throw AudioError("music features need at least one frame");
  if (!(m.fps > 0.0)) throw AudioError("music fps must be positive");
  if (!m.feats.allFinite()) throw AudioError("music features contain non-finite values");
}

/// Strictly increasing frame indices within [0, total_frames).
struct BeatSequence {
  std::vector<int> frames;
  int total_frames = 0;

  bool empty() const { return frames.empty(); }
  std::size_t size() const { return frames.size(); }

  void validate() const {
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i] < 0 || frames[i] >= total_frames) throw AudioError("beat frame out of range");
      if (i > 0 && frames[i] <= frames[i - 1]) throw AudioError("beat frames must be strictly increasing");
    }
  }
};

inline BeatSequence music_beats(const MusicFeatureSequence& m) {
  BeatSequence b;
  b.total_frames = m.frames();
  const int col = FeatureLayout::beat_onehot.begin;
  for (int t = 0; t < m.frames(); ++t)
    if (m.feats(t, col) > 0.5) b.frames.push_back(t);
  return b;
}

namespace audio_detail {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular mel filterbank, n_mels x (n_fft/2 + 1).
inline Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, double sr) {
  const int bins = n_fft / 2 + 1;
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  const double mmax = hz_to_mel(sr / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(mmax * static_cast<double>(i) / (n_mels + 1));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)], mid = edges[static_cast<std::size_t>(m) + 1],
                 hi = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = sr * k / n_fft;
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb(m, k) = w * 2.0 / (hi - lo);  // Slaney area normalization
    }
  }
  return fb;
}

/// Orthonormal DCT-II basis, n_out x n_in.
inline Eigen::MatrixXd dct_basis(int n_out, int n_in) {
  Eigen::MatrixXd d(n_out, n_in);
  for (int k = 0; k < n_out; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
    for (int n = 0; n < n_in; ++n) d(k, n) = s * std::cos(M_PI * k * (2.0 * n + 1.0) / (2.0 * n_in));
  }
  return d;
}

inline std::vector<double> hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Autocorrelation via FFT for lags [0, max_lag).
inline std::vector<double> autocorrelation(const std::vector<double>& x, int max_lag) {
  Eigen::FFT<double> fft;
  const int n = next_pow2(static_cast<int>(x.size()) + max_lag);
  std::vector<double> padded(static_cast<std::size_t>(n), 0.0);
  std::copy(x.begin(), x.end(), padded.begin());
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, padded);
  for (auto& c : spec) c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> ac;
  fft.inv(ac, spec);
  ac.resize(static_cast<std::size_t>(max_lag));
  return ac;
}

/// Dynamic-programming beat tracker over an onset envelope.
/// Returns beat frames; empty when the envelope carries no energy.
inline std::vector<int> track_beats(const std::vector<double>& onset, double fps, double start_bpm = 120.0) {
  const int n = static_cast<int>(onset.size());
  if (n < 3) return {};
  double mean = 0.0;
  for (double v : onset) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : onset) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd <= 1e-9) return {};
  std::vector<double> o(onset.size());
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = onset[i] / sd;

  // Tempo: onset autocorrelation weighted by a log-normal prior.
  const int min_lag = std::max(2, static_cast<int>(std::floor(60.0 * fps / 300.0)));
  const int max_lag = std::min(n - 1, static_cast<int>(std::ceil(60.0 * fps / 30.0)));
  if (max_lag <= min_lag) return {};
  const auto ac = autocorrelation(o, max_lag + 1);
  double best = -1.0;
  int period = min_lag;
  for (int lag = min_lag; lag <= max_lag; ++lag) {
    const double bpm = 60.0 * fps / lag;
    const double prior = std::exp(-0.5 * std::pow(std::log2(bpm / start_bpm), 2.0));
    const double score = ac[static_cast<std::size_t>(lag)] * prior;
    if (score > best) {
      best = score;
      period = lag;
    }
  }

  // Local score: onset smoothed by a Gaussian of width period/32.
  std::vector<double> local(static_cast<std::size_t>(n), 0.0);
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int k = -period; k <= period; ++k) {
      const int s = t + k;
      if (s < 0 || s >= n) continue;
      const double z = 32.0 * k / period;
      acc += o[static_cast<std::size_t>(s)] * std::exp(-0.5 * z * z);
    }
    local[static_cast<std::size_t>(t)] = acc;
  }

  const double tightness = 100.0;
  std::vector<double> cum(static_cast<std::size_t>(n), 0.0);
  std::vector<int> back(static_cast<std::size_t>(n), -1);
  for (int t = 0; t < n; ++t) {
    double best_prev = 0.0;
    int arg = -1;
    const int lo = t - 2 * period, hi = t - period / 2;
    for (int p = std::max(0, lo); p <= hi && p < t; ++p) {
      const double r = std::log(static_cast<double>(t - p) / period);
      const double s = cum[static_cast<std::size_t>(p)] - tightness * r * r;
      if (arg < 0 || s > best_prev) {
        best_prev = s;
        arg = p;
      }
    }
    const double lt = local[static_cast<std::size_t>(t)];
    if (arg >= 0 && best_prev > 0.0) {
      cum[static_cast<std::size_t>(t)] = lt + best_prev;
      back[static_cast<std::size_t>(t)] = arg;
    } else {
      cum[static_cast<std::size_t>(t)] = lt;
    }
  }

  // Last beat: latest local maximum of the cumulative score that is not weak.
  std::vector<int> peaks;
  for (int t = 0; t < n; ++t) {
    const double c = cum[static_cast<std::size_t>(t)];
    const bool left = t == 0 || c > cum[static_cast<std::size_t>(t - 1)];
    const bool right = t == n - 1 || c >= cum[static_cast<std::size_t>(t + 1)];
    if (left && right) peaks.push_back(t);
  }
  if (peaks.empty()) return {};
  std::vector<double> peak_vals;
  for (int p : peaks) peak_vals.push_back(cum[static_cast<std::size_t>(p)]);
  std::vector<double> sorted = peak_vals;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  int last = peaks.back();
  for (auto it = peaks.rbegin(); it != peaks.rend(); ++it) {
    if (cum[static_cast<std::size_t>(*it)] >= 0.5 * median) {
      last = *it;
      break;
    }
  }
  std::vector<int> beats;
  for (int t = last; t >= 0; t = back[static_cast<std::size_t>(t)]) beats.push_back(t);
  std::reverse(beats.begin(), beats.end());

  // Drop weak beats at either end (silence before/after the music).
  double rms = 0.0;
  for (int b : beats) rms += local[static_cast<std::size_t>(b)] * local[static_cast<std::size_t>(b)];
  rms = std::sqrt(rms / static_cast<double>(beats.size()));
  const double floor = 0.5 * rms;
  while (!beats.empty() && local[static_cast<std::size_t>(beats.front())] < floor) beats.erase(beats.begin());
  while (!beats.empty() && local[static_cast<std::size_t>(beats.back())] < floor) beats.pop_back();
  return beats;
}

}  // namespace audio_detail

struct FeatureExtractorOptions {
  double fps = kFps;
  int n_mels = 64;
  int tempogram_window = 384;
  double start_bpm = 120.0;
};

/// Features for a mono waveform. Frame t is centered at t * hop samples,
/// hop = sample_rate / fps; the frame count is round(duration * fps).
inline MusicFeatureSequence extract_features(std::span<const double> audio, double sample_rate,
                                             const FeatureExtractorOptions& opt = {}) {
  if (audio.empty()) throw AudioError("extract_features: empty audio");
  if (!(sample_rate > 0.0)) throw AudioError("extract_features: sample rate must be positive");
  const double hop = sample_rate / opt.fps;
  const int n_fft = std::max(256, audio_detail::next_pow2(static_cast<int>(std::ceil(2.0 * hop))));
  if (static_cast<double>(audio.size()) < hop) throw AudioError("extract_features: audio shorter than one analysis hop");
  const double duration = static_cast<double>(audio.size()) / sample_rate;
  const int frames = std::max(1, static_cast<int>(std::lround(duration * opt.fps)));
  const int bins = n_fft / 2 + 1;

  const auto window = audio_detail::hann(n_fft);
  Eigen::FFT<double> fft;
  Eigen::MatrixXd power(frames, bins);
  std::vector<double> buf(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spec;
  for (int t = 0; t < frames; ++t) {
    const auto center = static_cast<long>(std::llround(t * hop));
    for (int i = 0; i < n_fft; ++i) {
      const long s = center - n_fft / 2 + i;
      const double x = (s >= 0 && s < static_cast<long>(audio.size())) ? audio[static_cast<std::size_t>(s)] : 0.0;
      buf[static_cast<std::size_t>(i)] = x * window[static_cast<std::size_t>(i)];
    }
    fft.fwd(spec, buf);
    for (int k = 0; k < bins; ++k) power(t, k) = std::norm(spec[static_cast<std::size_t>(k)]);
  }

  MusicFeatureSequence out(frames, opt.fps);
  auto& f = out.feats;

  // Log-mel in dB, clipped to 80 dB below the clip maximum.
  const Eigen::MatrixXd fb = audio_detail::mel_filterbank(opt.n_mels, n_fft, sample_rate);
  Eigen::MatrixXd mel_db = (power * fb.transpose()).unaryExpr([](double v) { return 10.0 * std::log10(std::max(v, 1e-10)); });
  const double top = mel_db.maxCoeff();
  mel_db = mel_db.cwiseMax(top - 80.0);

  const Eigen::MatrixXd dct = audio_detail::dct_basis(FeatureLayout::mfcc.size(), opt.n_mels);
  const Eigen::MatrixXd mfcc = mel_db * dct.transpose();
  f.middleCols(FeatureLayout::mfcc.begin, FeatureLayout::mfcc.size()) = mfcc;

  // Regression delta over +-4 frames, edge frames clamped.
  constexpr int kDeltaWidth = 4;
  const double denom = 2.0 * (1 + 4 + 9 + 16);
  for (int t = 0; t < frames; ++t) {
    Eigen::RowVectorXd d = Eigen::RowVectorXd::Zero(mfcc.cols());
    for (int k = 1; k <= kDeltaWidth; ++k) {
      const int a = std::min(frames - 1, t + k), b = std::max(0, t - k);
      d += k * (mfcc.row(a) - mfcc.row(b));
    }
    f.block(t, FeatureLayout::mfcc_delta.begin, 1, FeatureLayout::mfcc_delta.size()) = d / denom;
  }

  // Chroma: spectral power folded onto pitch classes, max-normalized.
  for (int t = 0; t < frames; ++t) {
    std::array<double, 12> pc{};
    for (int k = 1; k < bins; ++k) {
      const double hz = sample_rate * k / n_fft;
      if (hz < 27.5) continue;
      const int midi = static_cast<int>(std::lround(12.0 * std::log2(hz / 440.0) + 69.0));
      pc[static_cast<std::size_t>(((midi % 12) + 12) % 12)] += power(t, k);
    }
    const double mx = *std::max_element(pc.begin(), pc.end());
    for (int c = 0; c < 12; ++c) f(t, FeatureLayout::chroma.begin + c) = mx > 1e-12 ? pc[static_cast<std::size_t>(c)] / mx : 0.0;
  }

  // Onset strength: mean positive log-mel flux.
  std::vector<double> onset(static_cast<std::size_t>(frames), 0.0);
  for (int t = 1; t < frames; ++t)
    onset[static_cast<std::size_t>(t)] = (mel_db.row(t) - mel_db.row(t - 1)).cwiseMax(0.0).mean();
  for (int t = 0; t < frames; ++t) f(t, FeatureLayout::onset_env.begin) = onset[static_cast<std::size_t>(t)];

  // Tempogram: local autocorrelation of the onset envelope under a Hann window.
  const int win = opt.tempogram_window;
  const auto twin = audio_detail::hann(win);
  for (int t = 0; t < frames; ++t) {
    std::vector<double> seg(static_cast<std::size_t>(win), 0.0);
    bool any = false;
    for (int i = 0; i < win; ++i) {
      const int s = t - win / 2 + i;
      if (s >= 0 && s < frames) {
        seg[static_cast<std::size_t>(i)] = onset[static_cast<std::size_t>(s)] * twin[static_cast<std::size_t>(i)];
        any = any || seg[static_cast<std::size_t>(i)] != 0.0;
      }
    }
    if (!any) continue;
    const auto ac = audio_detail::autocorrelation(seg, win);
    const double norm = ac[0] > 1e-12 ? ac[0] : 1.0;
    for (int l = 0; l < win && l < FeatureLayout::tempogram.size(); ++l)
      f(t, FeatureLayout::tempogram.begin + l) = ac[static_cast<std::size_t>(l)] / norm;
  }

  for (int b : audio_detail::track_beats(onset, opt.fps, opt.start_bpm)) f(b, FeatureLayout::beat_onehot.begin) = 1.0;
  return out;
}

}  // namespace cohedance
