#pragma once

#include "cohedance/audio.hpp"
#include "cohedance/motion.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace cohedance {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricReport {
  double fid = 0.0;
  double m_dist = 0.0;
  double mm_dist = 0.0;
  double div = 0.0;
  double mda = 0.0;
  double gda = 0.0;
  int clips = 0;
};

// ---------------------------------------------------------------------------
// Embedding-space metrics. Embedding sets are matrices with one row per item.

inline Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Frechet distance between Gaussian fits of two embedding sets:
/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), with lambda*I
/// added to both covariances.
inline double fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen, double lambda = 1e-6) {
  if (real.rows() < 2 || gen.rows() < 2) throw MetricError("fid: each set needs at least 2 embeddings");
  if (real.cols() != gen.cols()) throw MetricError("fid: embedding widths differ");
  auto stats = [lambda](const Eigen::MatrixXd& x) {
    Eigen::RowVectorXd mu = x.colwise().mean();
    Eigen::MatrixXd c = x.rowwise() - mu;
    Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
    cov.diagonal().array() += lambda;
    return std::pair{mu, cov};
  };
  const auto [mu1, s1] = stats(real);
  const auto [mu2, s2] = stats(gen);
  const Eigen::MatrixXd h = symmetric_sqrt(s1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h * s2 * h, Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

inline double mean_paired_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw MetricError("paired distance: shape mismatch");
  if (a.rows() == 0) throw MetricError("paired distance: empty input");
  return (a - b).rowwise().norm().mean();
}

/// Generated dance embedding vs ground-truth dance for the same music.
inline double m_dist(const Eigen::MatrixXd& gen_dance, const Eigen::MatrixXd& gt_dance) {
  return mean_paired_distance(gen_dance, gt_dance);
}

/// Music embedding vs its paired dance embedding.
inline double mm_dist(const Eigen::MatrixXd& music, const Eigen::MatrixXd& dance) { return mean_paired_distance(music, dance); }

/// Mean pairwise distance within a set.
inline double diversity(const Eigen::MatrixXd& e) {
  const Eigen::Index n = e.rows();
  if (n < 2) throw MetricError("diversity: need at least 2 embeddings");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) total += (e.row(i) - e.row(j)).norm();
  return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

// ---------------------------------------------------------------------------
// Kinematic beats

struct BeatDetectorOptions {
  int smooth_window = 5;
  int min_gap = 5;
};

/// Per-frame mean joint speed (m/s): central differences inside, one-sided
/// at the ends.
inline std::vector<double> joint_speed(const KeypointTrajectory& traj) {
  const int t_len = traj.frames;
  if (t_len < 2) throw MetricError("joint_speed: need at least 2 frames");
  std::vector<double> speed(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    const int a = std::max(0, t - 1), b = std::min(t_len - 1, t + 1);
    double s = 0.0;
    for (int j = 0; j < kJoints; ++j) s += (traj.at(b, j) - traj.at(a, j)).norm();
    speed[static_cast<std::size_t>(t)] = s / kJoints * traj.fps / (b - a);
  }
  return speed;
}

inline std::vector<double> moving_average(const std::vector<double>& x, int window) {
  if (window <= 1) return x;
  const int n = static_cast<int>(x.size()), half = window / 2;
  std::vector<double> y(x.size());
  for (int t = 0; t < n; ++t) {
    const int a = std::max(0, t - half), b = std::min(n - 1, t + half);
    double s = 0.0;
    for (int k = a; k <= b; ++k) s += x[static_cast<std::size_t>(k)];
    y[static_cast<std::size_t>(t)] = s / (b - a + 1);
  }
  return y;
}

/// Frames where the smoothed speed envelope has a local minimum, i.e. its
/// derivative changes sign from negative to non-negative. Beats closer
/// than min_gap keep the slower frame.
inline BeatSequence motion_beats(const KeypointTrajectory& traj, const BeatDetectorOptions& opt = {}) {
  if (traj.frames < 3) throw MetricError("motion_beats: need at least 3 frames");
  const std::vector<double> s = moving_average(joint_speed(traj), opt.smooth_window);
  const double scale = *std::max_element(s.begin(), s.end());
  const double eps = 1e-9 * std::max(1.0, scale);
  BeatSequence beats;
  beats.total_frames = traj.frames;
  for (int t = 1; t + 1 < traj.frames; ++t) {
    const double prev = s[static_cast<std::size_t>(t - 1)], cur = s[static_cast<std::size_t>(t)];
    if (!(prev - cur > eps)) continue;
    // Skip across a flat bottom to find where the envelope rises again.
    int u = t;
    while (u + 1 < traj.frames && std::abs(s[static_cast<std::size_t>(u + 1)] - cur) <= eps) ++u;
    if (u + 1 >= traj.frames || s[static_cast<std::size_t>(u + 1)] - cur <= eps) continue;
    if (!beats.frames.empty() && t - beats.frames.back() < opt.min_gap) {
      if (cur < s[static_cast<std::size_t>(beats.frames.back())]) beats.frames.back() = t;
      continue;
    }
    beats.frames.push_back(t);
  }
  return beats;
}

/// Mean over beats in `a` of exp(-d^2 / (2 sigma^2)), d the distance to the
/// nearest beat in `b`. Not symmetric in general.
inline double beat_align(const BeatSequence& a, const BeatSequence& b, double sigma = 3.0) {
  if (a.empty() || b.empty()) throw MetricError("beat_align: undefined for an empty beat sequence");
  if (!(sigma > 0.0)) throw MetricError("beat_align: sigma must be positive");
  double total = 0.0;
  for (int fa : a.frames) {
    const auto it = std::lower_bound(b.frames.begin(), b.frames.end(), fa);
    double d = std::numeric_limits<double>::infinity();
    if (it != b.frames.end()) d = std::min(d, static_cast<double>(*it - fa));
    if (it != b.frames.begin()) d = std::min(d, static_cast<double>(fa - *std::prev(it)));
    total += std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return total / static_cast<double>(a.size());
}

struct AlignmentOptions {
  double sigma = 3.0;
  std::optional<int> lead_dancer;  // default: highest mean joint speed
  bool ordered_pairs = true;       // false averages i < j only
  BeatDetectorOptions beats;
};

/// Dancer with the highest mean joint speed.
inline int lead_dancer(const std::vector<KeypointTrajectory>& trajs) {
  int best = 0;
  double best_speed = -1.0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto s = joint_speed(trajs[i]);
    double m = 0.0;
    for (double v : s) m += v;
    m /= static_cast<double>(s.size());
    if (m > best_speed + 1e-12) {
      best_speed = m;
      best = static_cast<int>(i);
    }
  }
  return best;
}

/// Alignment against an empty beat sequence scores 0 rather than failing,
/// so static generated motion can still be evaluated.
inline double beat_align_or_zero(const BeatSequence& a, const BeatSequence& b, double sigma) {
  if (a.empty() || b.empty()) return 0.0;
  return beat_align(a, b, sigma);
}

inline double mda(const GroupDanceSequence& group, const SkeletonDef& skel, const BeatSequence& music, const AlignmentOptions& opt = {}) {
  if (group.dancers < 1) throw MetricError("mda: need at least one dancer");
  const auto trajs = forward_kinematics(group, skel);
  const int lead = opt.lead_dancer.value_or(lead_dancer(trajs));
  if (lead < 0 || lead >= group.dancers) throw MetricError("mda: lead dancer index out of range");
  return beat_align_or_zero(motion_beats(trajs[static_cast<std::size_t>(lead)], opt.beats), music, opt.sigma);
}

inline double gda(const GroupDanceSequence& group, const SkeletonDef& skel, const AlignmentOptions& opt = {}) {
  if (group.dancers < 2) throw MetricError("gda: need at least two dancers");
  const auto trajs = forward_kinematics(group, skel);
  std::vector<BeatSequence> beats;
  for (const auto& tr : trajs) beats.push_back(motion_beats(tr, opt.beats));
  double total = 0.0;
  int pairs = 0;
  for (int i = 0; i < group.dancers; ++i)
    for (int j = 0; j < group.dancers; ++j) {
      if (i == j || (!opt.ordered_pairs && j < i)) continue;
      total += beat_align_or_zero(beats[static_cast<std::size_t>(i)], beats[static_cast<std::size_t>(j)], opt.sigma);
      ++pairs;
    }
  return total / pairs;
}

}  // namespace cohedance
