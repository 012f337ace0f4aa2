// Pose representation, 6D rotations, skeleton forward kinematics.
//
// A pose is the 147-dim vector [tau; theta]: 3 root-translation values
// followed by 24 joint rotations, each stored as the first two columns of
// its rotation matrix (column-major, a1 then a2). Joint order is the
// standard SMPL body ordering listed in kJointNames.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cohedance {

inline constexpr int kJoints = 24;
inline constexpr int kRootDim = 3;
inline constexpr int kSixD = 6;
inline constexpr int kPoseDim = kRootDim + kJoints * kSixD;  // 147
inline constexpr double kFps = 30.0;

static_assert(kPoseDim == 147);

inline constexpr std::array<const char*, kJoints> kJointNames = {
    "pelvis",     "left_hip",       "right_hip",      "spine1",      "left_knee",   "right_knee",
    "spine2",     "left_ankle",     "right_ankle",    "spine3",      "left_foot",   "right_foot",
    "neck",       "left_collar",    "right_collar",   "head",        "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",    "left_wrist",     "right_wrist", "left_hand",   "right_hand"};

/// Ankle and toe joints of the bundled skeleton.
inline const std::vector<int>& default_foot_joints() {
  static const std::vector<int> feet = {7, 8, 10, 11};
  return feet;
}

class MotionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for degenerate 6D inputs (zero or parallel columns).
class DegenerateRotationError : public MotionError {
 public:
  using MotionError::MotionError;
};

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using JointRotation6D = Eigen::Matrix<double, 6, 1>;
using PoseVector = Eigen::Matrix<double, kPoseDim, 1>;

inline Mat3 sixd_to_matrix(const JointRotation6D& r) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();
  if (!r.allFinite()) throw DegenerateRotationError("6D rotation has non-finite entries");
  const double n1 = a1.norm();
  const double n2 = a2.norm();
  if (n1 < 1e-12 || n2 < 1e-12) throw DegenerateRotationError("6D rotation has a zero-norm column");
  const Vec3 b1 = a1 / n1;
  const Vec3 u = a2 - b1.dot(a2) * b1;
  const double nu = u.norm();
  if (nu < 1e-9 * n2) throw DegenerateRotationError("6D rotation columns are parallel");
  const Vec3 b2 = u / nu;
  Mat3 m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

inline bool is_rotation(const Mat3& m, double tol = 1e-4) {
  if (!m.allFinite()) return false;
  if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return m.determinant() > 0.0;
}

inline JointRotation6D matrix_to_sixd(const Mat3& m) {
  if (!is_rotation(m)) throw MotionError("matrix_to_sixd: input is not a rotation matrix");
  JointRotation6D r;
  r.head<3>() = m.col(0);
  r.tail<3>() = m.col(1);
  return r;
}

inline Mat3 axis_angle_to_matrix(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-15) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

/// Geodesic angle between two rotations, in radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

inline JointRotation6D identity_sixd() {
  JointRotation6D r;
  r << 1, 0, 0, 0, 1, 0;
  return r;
}

/// One dancer's pose at one frame.
struct MotionFrame {
  Vec3 tau = Vec3::Zero();
  std::array<JointRotation6D, kJoints> theta;

  MotionFrame() { theta.fill(identity_sixd()); }

  PoseVector flatten() const {
    PoseVector v;
    v.head<kRootDim>() = tau;
    for (int j = 0; j < kJoints; ++j) v.segment<kSixD>(kRootDim + kSixD * j) = theta[static_cast<std::size_t>(j)];
    return v;
  }

  template <class Derived>
  static MotionFrame from_flat(const Eigen::MatrixBase<Derived>& v) {
    if (v.size() != kPoseDim) throw MotionError("pose vector must have 147 entries");
    MotionFrame f;
    for (int i = 0; i < kRootDim; ++i) f.tau(i) = v(i);
    for (int j = 0; j < kJoints; ++j)
      for (int k = 0; k < kSixD; ++k) f.theta[static_cast<std::size_t>(j)](k) = v(kRootDim + kSixD * j + k);
    return f;
  }
};

/// N dancers x T frames of 147-dim poses, stored as an (N*T) x 147
/// row-major matrix in dancer-major order (row = dancer * T + frame).
struct GroupDanceSequence {
  int dancers = 0;
  int frames = 0;
  double fps = kFps;
  Eigen::Matrix<double, Eigen::Dynamic, kPoseDim, Eigen::RowMajor> data;

  GroupDanceSequence() = default;
  GroupDanceSequence(int n, int t, double rate = kFps) : dancers(n), frames(t), fps(rate) {
    if (n < 1 || t < 1) throw MotionError("group sequence needs at least one dancer and one frame");
    data.setZero(static_cast<Eigen::Index>(n) * t, kPoseDim);
    for (Eigen::Index r = 0; r < data.rows(); ++r)
      for (int j = 0; j < kJoints; ++j) data.row(r).segment<kSixD>(kRootDim + kSixD * j) = identity_sixd().transpose();
  }

  Eigen::Index row_index(int dancer, int frame) const {
    return static_cast<Eigen::Index>(dancer) * frames + frame;
  }
  auto pose(int dancer, int frame) { return data.row(row_index(dancer, frame)); }
  auto pose(int dancer, int frame) const { return data.row(row_index(dancer, frame)); }

  Vec3 tau(int dancer, int frame) const { return pose(dancer, frame).head<kRootDim>().transpose(); }
  JointRotation6D joint(int dancer, int frame, int j) const {
    return pose(dancer, frame).segment<kSixD>(kRootDim + kSixD * j).transpose();
  }

  MotionFrame frame_at(int dancer, int frame) const { return MotionFrame::from_flat(pose(dancer, frame).transpose()); }
  void set_frame(int dancer, int frame, const MotionFrame& f) { pose(dancer, frame) = f.flatten().transpose(); }

  /// Frames [start, start + count) of every dancer.
  GroupDanceSequence slice_frames(int start, int count) const {
    if (start < 0 || count < 1 || start + count > frames) throw MotionError("slice_frames: range out of bounds");
    GroupDanceSequence out(dancers, count, fps);
    for (int i = 0; i < dancers; ++i) out.data.middleRows(out.row_index(i, 0), count) = data.middleRows(row_index(i, start), count);
    return out;
  }

  /// Reorder dancers: output dancer i is input dancer perm[i].
  GroupDanceSequence permute_dancers(const std::vector<int>& perm) const {
    if (static_cast<int>(perm.size()) != dancers) throw MotionError("permutation size mismatch");
    GroupDanceSequence out(dancers, frames, fps);
    for (int i = 0; i < dancers; ++i) out.data.middleRows(out.row_index(i, 0), frames) = data.middleRows(row_index(perm[static_cast<std::size_t>(i)], 0), frames);
    return out;
  }
};

/// Validity check: shape, finite values, non-degenerate 6D blocks.
/// Throws MotionError describing the first violation.
inline void validate(const GroupDanceSequence& seq) {
  if (seq.dancers < 1 || seq.frames < 1) throw MotionError("sequence needs N >= 1 and T >= 1");
  if (seq.data.rows() != static_cast<Eigen::Index>(seq.dancers) * seq.frames) throw MotionError("sequence row count != N*T");
  if (!(seq.fps > 0.0) || !std::isfinite(seq.fps)) throw MotionError("sequence fps must be positive");
  if (!seq.data.allFinite()) throw MotionError("sequence contains non-finite values");
  for (int i = 0; i < seq.dancers; ++i)
    for (int t = 0; t < seq.frames; ++t)
      for (int j = 0; j < kJoints; ++j) {
        const JointRotation6D r = seq.joint(i, t, j);
        try {
          (void)sixd_to_matrix(r);
        } catch (const DegenerateRotationError& e) {
          throw MotionError("dancer " + std::to_string(i) + " frame " + std::to_string(t) + " joint " +
                            std::to_string(j) + ": " + e.what());
        }
      }
}

struct SkeletonDef {
  std::array<int, kJoints> parent{};
  std::array<Vec3, kJoints> offset{};

  /// 24-joint SMPL topology with approximate adult rest offsets (meters,
  /// y up, +x toward the body's left, +z forward).
  static SkeletonDef smpl() {
    SkeletonDef s;
    s.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
    s.offset = {Vec3(0.0, 0.0, 0.0),     Vec3(0.06, -0.09, 0.0),   Vec3(-0.06, -0.09, 0.0),
                Vec3(0.0, 0.11, -0.02),  Vec3(0.04, -0.38, 0.0),   Vec3(-0.04, -0.38, 0.0),
                Vec3(0.0, 0.13, 0.01),   Vec3(-0.01, -0.40, -0.04), Vec3(0.01, -0.40, -0.04),
                Vec3(0.0, 0.05, 0.02),   Vec3(0.02, -0.05, 0.12),  Vec3(-0.02, -0.05, 0.12),
                Vec3(0.0, 0.21, -0.03),  Vec3(0.07, 0.11, -0.01),  Vec3(-0.07, 0.11, -0.01),
                Vec3(0.0, 0.09, 0.05),   Vec3(0.12, 0.04, -0.02),  Vec3(-0.12, 0.04, -0.02),
                Vec3(0.26, 0.0, -0.02),  Vec3(-0.26, 0.0, -0.02),  Vec3(0.25, 0.01, 0.0),
                Vec3(-0.25, 0.01, 0.0),  Vec3(0.08, -0.01, -0.01), Vec3(-0.08, -0.01, -0.01)};
    return s;
  }

  /// Parents must precede children (so one forward sweep suffices) and
  /// only joint 0 may be the root.
  void validate() const {
    if (parent[0] != -1) throw MotionError("skeleton: joint 0 must be the root");
    for (int j = 1; j < kJoints; ++j) {
      const int p = parent[static_cast<std::size_t>(j)];
      if (p < 0 || p >= j) throw MotionError("skeleton: joint " + std::to_string(j) + " has invalid parent");
    }
    for (const auto& o : offset)
      if (!o.allFinite()) throw MotionError("skeleton: non-finite offset");
  }

  /// Height of the lowest foot joint in the rest pose relative to the root.
  double rest_foot_drop(const std::vector<int>& feet = default_foot_joints()) const {
    std::array<Vec3, kJoints> p;
    p[0] = Vec3::Zero();
    for (int j = 1; j < kJoints; ++j) p[static_cast<std::size_t>(j)] = p[static_cast<std::size_t>(parent[static_cast<std::size_t>(j)])] + offset[static_cast<std::size_t>(j)];
    double lowest = 0.0;
    for (int f : feet) lowest = std::min(lowest, p[static_cast<std::size_t>(f)].y());
    return -lowest;
  }
};

/// World-space joint positions of one dancer: frames x 24 points.
struct KeypointTrajectory {
  int frames = 0;
  double fps = kFps;
  std::vector<Vec3> points;  // frame-major, 24 per frame

  KeypointTrajectory() = default;
  KeypointTrajectory(int t, double rate) : frames(t), fps(rate), points(static_cast<std::size_t>(t) * kJoints, Vec3::Zero()) {}

  Vec3& at(int frame, int joint) { return points[static_cast<std::size_t>(frame) * kJoints + static_cast<std::size_t>(joint)]; }
  const Vec3& at(int frame, int joint) const {
    return points[static_cast<std::size_t>(frame) * kJoints + static_cast<std::size_t>(joint)];
  }
};

/// Joint world positions for a single pose.
inline std::array<Vec3, kJoints> pose_keypoints(const Eigen::Ref<const PoseVector>& pose, const SkeletonDef& skel) {
  std::array<Vec3, kJoints> pos;
  std::array<Mat3, kJoints> rot;
  for (int j = 0; j < kJoints; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const Mat3 local = sixd_to_matrix(pose.segment<kSixD>(kRootDim + kSixD * j));
    const int p = skel.parent[uj];
    if (p < 0) {
      rot[uj] = local;
      pos[uj] = pose.head<kRootDim>();
    } else {
      const auto up = static_cast<std::size_t>(p);
      pos[uj] = pos[up] + rot[up] * skel.offset[uj];
      rot[uj] = rot[up] * local;
    }
  }
  return pos;
}

inline KeypointTrajectory dancer_keypoints(const GroupDanceSequence& seq, int dancer, const SkeletonDef& skel) {
  KeypointTrajectory traj(seq.frames, seq.fps);
  for (int t = 0; t < seq.frames; ++t) {
    const PoseVector pose = seq.pose(dancer, t).transpose();
    const auto kp = pose_keypoints(pose, skel);
    for (int j = 0; j < kJoints; ++j) traj.at(t, j) = kp[static_cast<std::size_t>(j)];
  }
  return traj;
}

inline std::vector<KeypointTrajectory> forward_kinematics(const GroupDanceSequence& seq, const SkeletonDef& skel) {
  validate(seq);
  skel.validate();
  std::vector<KeypointTrajectory> out;
  out.reserve(static_cast<std::size_t>(seq.dancers));
  for (int i = 0; i < seq.dancers; ++i) out.push_back(dancer_keypoints(seq, i, skel));
  return out;
}

/// Forward-difference root velocity (m/s) per dancer: N entries of (T-1) x 3.
inline std::vector<Eigen::MatrixX3d> root_velocity(const GroupDanceSequence& seq) {
  if (seq.frames < 2) throw MotionError("root_velocity: need at least two frames");
  std::vector<Eigen::MatrixX3d> out;
  for (int i = 0; i < seq.dancers; ++i) {
    Eigen::MatrixX3d v(seq.frames - 1, 3);
    for (int t = 0; t + 1 < seq.frames; ++t) v.row(t) = (seq.tau(i, t + 1) - seq.tau(i, t)).transpose() * seq.fps;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace cohedance
