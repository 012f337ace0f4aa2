// Automated preprocessing: smoothing, grounding, anomaly flagging and
// repair, dataset manifests and train/test splits.
#pragma once

#include "cohedance/motion.hpp"
#include "cohedance/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cohedance {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// y_0 = x_0, y_t = alpha x_t + (1 - alpha) y_{t-1}, per column.
inline Eigen::MatrixXd exp_smooth(const Eigen::MatrixXd& x, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DataError("exp_smooth: alpha must lie in (0, 1]");
  if (x.rows() < 1) throw DataError("exp_smooth: empty signal");
  Eigen::MatrixXd y(x.rows(), x.cols());
  y.row(0) = x.row(0);
  for (Eigen::Index t = 1; t < x.rows(); ++t) y.row(t) = alpha * x.row(t) + (1.0 - alpha) * y.row(t - 1);
  return y;
}

enum class RotationFormat { AxisAngle, SixD, Matrix };

inline int rotation_width(RotationFormat f) {
  switch (f) {
    case RotationFormat::AxisAngle: return 3;
    case RotationFormat::SixD: return 6;
    case RotationFormat::Matrix: return 9;
  }
  return 0;
}

/// Per-dancer root translation plus 24 joint rotations in any supported
/// parameterization. Rows are dancer-major like GroupDanceSequence; a
/// matrix is stored row-major (r00 r01 r02 r10 ...).
struct RawPoseTrack {
  std::string source;
  double fps = kFps;
  RotationFormat format = RotationFormat::AxisAngle;
  int dancers = 0;
  int frames = 0;
  Eigen::MatrixXd data;

  int width() const { return kRootDim + kJoints * rotation_width(format); }

  Mat3 rotation(int dancer, int frame, int joint) const {
    const Eigen::Index row = static_cast<Eigen::Index>(dancer) * frames + frame;
    const int w = rotation_width(format);
    const Eigen::Index c = kRootDim + static_cast<Eigen::Index>(joint) * w;
    switch (format) {
      case RotationFormat::AxisAngle: return axis_angle_to_matrix(data.block<1, 3>(row, c).transpose());
      case RotationFormat::SixD: return sixd_to_matrix(data.block<1, 6>(row, c).transpose());
      case RotationFormat::Matrix: {
        Mat3 m;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) m(i, j) = data(row, c + 3 * i + j);
        return m;
      }
    }
    return Mat3::Identity();
  }

  void validate() const {
    if (dancers < 1 || frames < 1) throw DataError("raw track: empty");
    if (data.rows() != static_cast<Eigen::Index>(dancers) * frames || data.cols() != width())
      throw DataError("raw track: data shape does not match dancers, frames and format");
    if (!data.allFinite()) throw DataError("raw track: non-finite values");
  }
};

struct SmoothingOptions {
  double alpha_rotation = 0.9;
  double alpha_translation = 0.8;
};

struct SmoothResult {
  GroupDanceSequence sequence;
  /// (dancer, frame, joint) where the smoothed 6D vector was degenerate and
  /// the previous frame's rotation was reused.
  std::vector<std::array<int, 3>> degenerate;
};

/// Converts rotations to 6D, smooths translation and 6D channels over time,
/// then projects every joint back onto a rotation.
inline SmoothResult smooth_rotations(const RawPoseTrack& track, const SmoothingOptions& opt = {}) {
  track.validate();
  GroupDanceSequence seq(track.dancers, track.frames, track.fps);
  for (int i = 0; i < track.dancers; ++i)
    for (int t = 0; t < track.frames; ++t) {
      auto pose = seq.pose(i, t);
      const Eigen::Index row = static_cast<Eigen::Index>(i) * track.frames + t;
      pose.head<kRootDim>() = track.data.block<1, kRootDim>(row, 0);
      for (int j = 0; j < kJoints; ++j)
        pose.segment<kSixD>(kRootDim + j * kSixD) = matrix_to_sixd(track.rotation(i, t, j)).transpose();
    }

  SmoothResult out{seq, {}};
  for (int i = 0; i < seq.dancers; ++i) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(i) * seq.frames;
    Eigen::MatrixXd block = seq.data.block(r0, 0, seq.frames, kPoseDim);
    Eigen::MatrixXd smoothed(block.rows(), block.cols());
    smoothed.leftCols(kRootDim) = exp_smooth(block.leftCols(kRootDim), opt.alpha_translation);
    smoothed.rightCols(kPoseDim - kRootDim) = exp_smooth(block.rightCols(kPoseDim - kRootDim), opt.alpha_rotation);
    out.sequence.data.block(r0, 0, seq.frames, kPoseDim) = smoothed;
    for (int t = 0; t < seq.frames; ++t)
      for (int j = 0; j < kJoints; ++j) {
        auto r = out.sequence.pose(i, t).segment<kSixD>(kRootDim + j * kSixD);
        try {
          r = matrix_to_sixd(sixd_to_matrix(r.transpose())).transpose();
        } catch (const DegenerateRotationError&) {
          out.degenerate.push_back({i, t, j});
          if (t > 0) {
            r = out.sequence.pose(i, t - 1).segment<kSixD>(kRootDim + j * kSixD);
          } else {
            r = identity_sixd().transpose();
          }
        }
      }
  }
  return out;
}

inline RawPoseTrack raw_from_sequence(const GroupDanceSequence& seq, const std::string& source = "") {
  RawPoseTrack raw;
  raw.source = source;
  raw.fps = seq.fps;
  raw.format = RotationFormat::SixD;
  raw.dancers = seq.dancers;
  raw.frames = seq.frames;
  raw.data = seq.data;
  return raw;
}

// ---------------------------------------------------------------------------
// Grounding

inline constexpr int kVerticalAxis = 1;

/// Lowest foot-joint height over all dancers and frames.
inline double min_foot_height(const GroupDanceSequence& clip, const SkeletonDef& skel, const std::vector<int>& feet = default_foot_joints()) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& traj : forward_kinematics(clip, skel))
    for (int t = 0; t < traj.frames; ++t)
      for (int j : feet) lo = std::min(lo, traj.at(t, j)(kVerticalAxis));
  return lo;
}

/// Shifts every dancer's root vertically so the lowest foot joint over the
/// clip sits at height 0. Horizontal channels are untouched.
inline GroupDanceSequence ground_plane_align(const GroupDanceSequence& clip, const SkeletonDef& skel,
                                             const std::vector<int>& feet = default_foot_joints(), double* shift_out = nullptr) {
  const double shift = min_foot_height(clip, skel, feet);
  GroupDanceSequence out = clip;
  out.data.col(kVerticalAxis).array() -= shift;
  if (shift_out) *shift_out = shift;
  return out;
}

/// Grounds each segment [starts[k], starts[k+1]) independently.
inline GroupDanceSequence ground_plane_align_segments(const GroupDanceSequence& clip, const SkeletonDef& skel,
                                                      std::vector<int> starts, const std::vector<int>& feet = default_foot_joints()) {
  if (starts.empty() || starts.front() != 0) starts.insert(starts.begin(), 0);
  GroupDanceSequence out = clip;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const int a = starts[k];
    const int b = k + 1 < starts.size() ? starts[k + 1] : clip.frames;
    if (a < 0 || b > clip.frames || a >= b) throw DataError("ground_plane_align_segments: invalid segment bounds");
    const double shift = min_foot_height(clip.slice_frames(a, b - a), skel, feet);
    for (int i = 0; i < clip.dancers; ++i)
      for (int t = a; t < b; ++t) out.pose(i, t)(kVerticalAxis) -= shift;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Anomalies

enum class AnomalySignal { Velocity, Acceleration };

inline const char* to_string(AnomalySignal s) { return s == AnomalySignal::Velocity ? "velocity" : "acceleration"; }

struct AnomalyFlag {
  int dancer = 0;
  int frame = 0;
  AnomalySignal signal = AnomalySignal::Velocity;
  double magnitude = 0.0;  // max over joints, m/s or m/s^2
};

struct AnomalyReport {
  std::string clip;
  std::vector<AnomalyFlag> flags;

  bool empty() const { return flags.empty(); }

  /// Sorted distinct flagged frames over all dancers and signals.
  std::vector<int> frames() const {
    std::set<int> s;
    for (const auto& f : flags) s.insert(f.frame);
    return {s.begin(), s.end()};
  }

  bool flagged(int frame) const {
    return std::any_of(flags.begin(), flags.end(), [frame](const AnomalyFlag& f) { return f.frame == frame; });
  }
};

struct AnomalyThresholds {
  double velocity = 10.0;       // m/s
  double acceleration = 100.0;  // m/s^2
};

/// Velocity at frame t is the backward difference (p_t - p_{t-1}) * fps;
/// acceleration is the central second difference * fps^2.
inline AnomalyReport detect_anomalies(const GroupDanceSequence& clip, const SkeletonDef& skel, const AnomalyThresholds& th = {}) {
  if (clip.frames < 3) throw DataError("detect_anomalies: need at least 3 frames");
  AnomalyReport report;
  const auto trajs = forward_kinematics(clip, skel);
  const double fps = clip.fps;
  for (int i = 0; i < clip.dancers; ++i) {
    const auto& tr = trajs[static_cast<std::size_t>(i)];
    for (int t = 1; t < clip.frames; ++t) {
      double vmax = 0.0;
      for (int j = 0; j < kJoints; ++j) vmax = std::max(vmax, (tr.at(t, j) - tr.at(t - 1, j)).norm() * fps);
      if (vmax > th.velocity) report.flags.push_back({i, t, AnomalySignal::Velocity, vmax});
      if (t + 1 < clip.frames) {
        double amax = 0.0;
        for (int j = 0; j < kJoints; ++j)
          amax = std::max(amax, (tr.at(t + 1, j) - 2.0 * tr.at(t, j) + tr.at(t - 1, j)).norm() * fps * fps);
        if (amax > th.acceleration) report.flags.push_back({i, t, AnomalySignal::Acceleration, amax});
      }
    }
  }
  return report;
}

/// Projects each joint's 6D block back onto a rotation.
inline void reorthonormalize(GroupDanceSequence& seq) {
  for (int i = 0; i < seq.dancers; ++i)
    for (int t = 0; t < seq.frames; ++t)
      for (int j = 0; j < kJoints; ++j) {
        auto r = seq.pose(i, t).segment<kSixD>(kRootDim + j * kSixD);
        r = matrix_to_sixd(sixd_to_matrix(r.transpose())).transpose();
      }
}

/// Cubic Hermite fill of frames a+1 .. b-1 from good frames a and b, with
/// one-sided finite-difference tangents.
inline void hermite_fill(GroupDanceSequence& seq, int a, int b) {
  const double span = b - a;
  for (int i = 0; i < seq.dancers; ++i) {
    const PoseVector xa = seq.pose(i, a).transpose(), xb = seq.pose(i, b).transpose();
    const PoseVector chord = (xb - xa) / span;
    const PoseVector ma = a > 0 ? PoseVector(seq.pose(i, a).transpose() - seq.pose(i, a - 1).transpose()) : chord;
    const PoseVector mb = b + 1 < seq.frames ? PoseVector(seq.pose(i, b + 1).transpose() - seq.pose(i, b).transpose()) : chord;
    for (int t = a + 1; t < b; ++t) {
      const double s = (t - a) / span, s2 = s * s, s3 = s2 * s;
      const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
      seq.pose(i, t) = (h00 * xa + h10 * span * ma + h01 * xb + h11 * span * mb).transpose();
    }
  }
}

struct MotionSegment {
  int start = 0;  // first frame in the source clip
  GroupDanceSequence sequence;
};

/// Replaces flagged frames: gaps of at most max_gap frames between good
/// frames are filled by Hermite interpolation; longer gaps and gaps
/// touching either end split or trim the clip. Returns the kept segments.
inline std::vector<MotionSegment> repair_anomalies(const GroupDanceSequence& clip, const AnomalyReport& report, int max_gap = 15) {
  std::vector<bool> bad(static_cast<std::size_t>(clip.frames), false);
  for (int f : report.frames())
    if (f >= 0 && f < clip.frames) bad[static_cast<std::size_t>(f)] = true;

  GroupDanceSequence work = clip;
  std::vector<std::pair<int, int>> keep;  // [start, end) ranges of usable frames
  int seg_start = -1;
  int t = 0;
  while (t < clip.frames) {
    if (!bad[static_cast<std::size_t>(t)]) {
      if (seg_start < 0) seg_start = t;
      ++t;
      continue;
    }
    int u = t;
    while (u < clip.frames && bad[static_cast<std::size_t>(u)]) ++u;
    const int gap = u - t;
    if (seg_start >= 0 && u < clip.frames && gap <= max_gap) {
      hermite_fill(work, t - 1, u);
    } else if (seg_start >= 0) {
      keep.emplace_back(seg_start, t);
      seg_start = -1;
    }
    t = u;
  }
  if (seg_start >= 0) keep.emplace_back(seg_start, clip.frames);
  reorthonormalize(work);

  std::vector<MotionSegment> out;
  for (const auto& [a, b] : keep) out.push_back({a, work.slice_frames(a, b - a)});
  return out;
}

struct PreprocessOptions {
  SmoothingOptions smoothing;
  AnomalyThresholds thresholds;
  int max_gap = 15;
  int min_segment_frames = 2;
  std::vector<int> feet = default_foot_joints();
};

struct PreprocessResult {
  std::vector<MotionSegment> segments;
  AnomalyReport anomalies;
  std::size_t degenerate_rotations = 0;
};

/// smooth -> flag anomalies -> repair or split -> ground each segment.
inline PreprocessResult preprocess_clip(const RawPoseTrack& raw, const SkeletonDef& skel, const PreprocessOptions& opt = {}) {
  PreprocessResult res;
  SmoothResult sm = smooth_rotations(raw, opt.smoothing);
  res.degenerate_rotations = sm.degenerate.size();
  const GroupDanceSequence& seq = sm.sequence;
  if (seq.frames >= 3) {
    res.anomalies = detect_anomalies(seq, skel, opt.thresholds);
  }
  res.anomalies.clip = raw.source;
  for (auto& s : repair_anomalies(seq, res.anomalies, opt.max_gap))
    if (s.sequence.frames >= opt.min_segment_frames) res.segments.push_back({s.start, ground_plane_align(s.sequence, skel, opt.feet)});
  return res;
}

// ---------------------------------------------------------------------------
// Manifests and splits

struct ClipEntry {
  std::string name;
  std::string motion;  // GDNC path, relative to the manifest directory
  std::string music;   // MFTR path, may be empty
  std::string genre;
  double duration = 0.0;
  int dancers = 0;
  int frames = 0;
  std::string split;
};

struct DatasetManifest {
  std::vector<ClipEntry> clips;
  std::uint64_t split_seed = 0;
  std::vector<std::pair<std::string, double>> fractions;

  std::vector<ClipEntry> subset(const std::string& split) const {
    std::vector<ClipEntry> out;
    for (const auto& c : clips)
      if (c.split == split) out.push_back(c);
    return out;
  }
};

/// Largest-remainder counts for `n` items.
inline std::vector<int> split_counts(int n, const std::vector<double>& fractions) {
  std::vector<int> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int used = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double exact = fractions[k] * n;
    // Nudge against values like 85.00000000000001 flooring the wrong way.
    counts[k] = static_cast<int>(std::floor(exact + 1e-9));
    used += counts[k];
    rem.emplace_back(exact - counts[k], k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++counts[rem[k % rem.size()].second];
  return counts;
}

/// Seeded clip-level shuffle, then contiguous assignment by fraction.
inline DatasetManifest make_split(const DatasetManifest& manifest, const std::vector<std::pair<std::string, double>>& fractions,
                                  std::uint64_t seed) {
  if (manifest.clips.empty()) throw DataError("make_split: empty manifest");
  if (fractions.empty()) throw DataError("make_split: no fractions given");
  double total = 0.0;
  std::vector<double> f;
  for (const auto& [name, frac] : fractions) {
    if (frac < 0.0) throw DataError("make_split: negative fraction for " + name);
    total += frac;
    f.push_back(frac);
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("make_split: fractions must sum to 1");

  const int n = static_cast<int>(manifest.clips.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order.begin(), order.end());

  DatasetManifest out = manifest;
  out.split_seed = seed;
  out.fractions = fractions;
  const auto counts = split_counts(n, f);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < counts.size(); ++k)
    for (int c = 0; c < counts[k]; ++c) out.clips[static_cast<std::size_t>(order[pos++])].split = fractions[k].first;
  return out;
}

}  // namespace cohedance
