#include "cohedance/datapipe.hpp"
#include "cohedance/synth.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <set>

using namespace cohedance;
using namespace testing_support;

namespace {

GroupDanceSequence swaying_clip(int dancers = 2, double seconds = 3.0) {
  SynthSpec spec;
  spec.bpm = 100.0;
  spec.duration = seconds;
  spec.dancers = dancers;
  return make_beat_locked_dance(spec);
}

DatasetManifest numbered_manifest(int n) {
  DatasetManifest m;
  for (int k = 0; k < n; ++k) m.clips.push_back({"c" + std::to_string(k), "c.gdnc", "", "", 1.0, 2, 30, ""});
  return m;
}

}  // namespace

TEST(ExpSmooth, ConstantSignalUnchanged) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(10, 3, 1.7);
  EXPECT_TRUE(exp_smooth(x, 0.3).isApprox(x, 1e-15));
}

TEST(ExpSmooth, AlphaOneIsIdentity) {
  Rng rng(1);
  const Eigen::MatrixXd x = random_matrix<double>(12, 4, rng);
  EXPECT_EQ(exp_smooth(x, 1.0), x);
}

TEST(ExpSmooth, UnitStepHalfAlpha) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(5, 1);
  x(0, 0) = 0.0;
  const Eigen::MatrixXd y = exp_smooth(x, 0.5);
  const double expect[] = {0.0, 0.5, 0.75, 0.875, 0.9375};
  for (int t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(y(t, 0), expect[t]);
}

TEST(ExpSmooth, RejectsBadAlpha) {
  EXPECT_THROW(exp_smooth(Eigen::MatrixXd::Ones(3, 1), 0.0), DataError);
  EXPECT_THROW(exp_smooth(Eigen::MatrixXd::Ones(3, 1), 1.5), DataError);
}

TEST(SmoothRotations, ConstantRotationUnchanged) {
  GroupDanceSequence seq(1, 8);
  const Mat3 r = rotation_about(Vec3(0.3, 1.0, -0.2), 0.8);
  for (int t = 0; t < 8; ++t) {
    MotionFrame f;
    f.tau = Vec3(0.1, 0.9, 0.0);
    for (auto& th : f.theta) th = matrix_to_sixd(r);
    seq.set_frame(0, t, f);
  }
  const auto out = smooth_rotations(raw_from_sequence(seq));
  EXPECT_TRUE(out.degenerate.empty());
  EXPECT_LT((out.sequence.data - seq.data).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SmoothRotations, NearbyRotationsStayBetween) {
  const Mat3 a = rotation_about(Vec3(1, 0, 0), 0.2);
  const Mat3 b = a * rotation_about(Vec3(0, 1, 1), 4.0 * std::numbers::pi / 180.0);
  const double gap = rotation_angle_between(a, b);
  GroupDanceSequence seq(1, 10);
  for (int t = 0; t < 10; ++t) {
    MotionFrame f;
    for (auto& th : f.theta) th = matrix_to_sixd(t % 3 == 0 ? b : a);
    seq.set_frame(0, t, f);
  }
  const auto out = smooth_rotations(raw_from_sequence(seq), {0.6, 0.6});
  for (int t = 0; t < 10; ++t) {
    const Mat3 r = sixd_to_matrix(out.sequence.joint(0, t, 4));
    EXPECT_LE(rotation_angle_between(r, a), gap + 1e-4);
    EXPECT_LE(rotation_angle_between(r, b), gap + 1e-4);
  }
}

TEST(SmoothRotations, OutputsAreRotations) {
  Rng rng(2);
  const auto seq = random_dance(2, 12, rng);
  const auto out = smooth_rotations(raw_from_sequence(seq));
  for (int i = 0; i < 2; ++i)
    for (int t = 0; t < 12; ++t)
      for (int j = 0; j < kJoints; ++j) {
        const Mat3 r = sixd_to_matrix(out.sequence.joint(i, t, j));
        EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-5);
      }
}

TEST(SmoothRotations, AcceptsAllFormats) {
  Rng rng(3);
  const Mat3 r = random_rotation(rng);
  for (auto fmt : {RotationFormat::AxisAngle, RotationFormat::SixD, RotationFormat::Matrix}) {
    RawPoseTrack raw;
    raw.format = fmt;
    raw.dancers = 1;
    raw.frames = 2;
    raw.data = Eigen::MatrixXd::Zero(2, raw.width());
    for (int t = 0; t < 2; ++t)
      for (int j = 0; j < kJoints; ++j) {
        const int w = rotation_width(fmt), c = kRootDim + j * w;
        if (fmt == RotationFormat::AxisAngle) {
          Eigen::AngleAxisd aa(r);
          raw.data.block<1, 3>(t, c) = (aa.axis() * aa.angle()).transpose();
        } else if (fmt == RotationFormat::SixD) {
          raw.data.block<1, 6>(t, c) = matrix_to_sixd(r).transpose();
        } else {
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) raw.data(t, c + 3 * a + b) = r(a, b);
        }
      }
    const auto out = smooth_rotations(raw);
    EXPECT_LT(rotation_angle_between(sixd_to_matrix(out.sequence.joint(0, 1, 7)), r), 1e-6);
  }
}

TEST(SmoothRotations, RejectsMalformedTrack) {
  RawPoseTrack raw;
  raw.dancers = 1;
  raw.frames = 3;
  raw.data = Eigen::MatrixXd::Zero(2, raw.width());
  EXPECT_THROW(smooth_rotations(raw), DataError);
}

TEST(GroundPlane, GroundedClipHasZeroShift) {
  const auto clip = swaying_clip();
  double shift = 1.0;
  const auto once = ground_plane_align(clip, SkeletonDef::smpl(), default_foot_joints(), &shift);
  ground_plane_align(once, SkeletonDef::smpl(), default_foot_joints(), &shift);
  EXPECT_NEAR(shift, 0.0, 1e-12);
}

TEST(GroundPlane, FloatingClipShiftedDown) {
  const auto skel = SkeletonDef::smpl();
  const auto grounded = ground_plane_align(swaying_clip(), skel);
  auto floating = grounded;
  floating.data.col(kVerticalAxis).array() += 0.3;
  double shift = 0.0;
  const auto back = ground_plane_align(floating, skel, default_foot_joints(), &shift);
  EXPECT_NEAR(shift, 0.3, 1e-12);
  EXPECT_LT((back.data - grounded.data).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(min_foot_height(back, skel), 0.0, 1e-12);
}

TEST(GroundPlane, SegmentsGroundedIndependently) {
  const auto skel = SkeletonDef::smpl();
  auto clip = ground_plane_align(swaying_clip(1, 4.0), skel);
  for (int t = 0; t < clip.frames; ++t) clip.pose(0, t)(kVerticalAxis) += t < 60 ? 0.2 : -0.4;
  const auto out = ground_plane_align_segments(clip, skel, {0, 60});
  EXPECT_NEAR(min_foot_height(out.slice_frames(0, 60), skel), 0.0, 1e-12);
  EXPECT_NEAR(min_foot_height(out.slice_frames(60, clip.frames - 60), skel), 0.0, 1e-12);
  EXPECT_THROW(ground_plane_align_segments(clip, skel, {0, 500}), DataError);
}

TEST(Anomalies, SmoothMotionIsClean) { EXPECT_TRUE(detect_anomalies(swaying_clip(), SkeletonDef::smpl()).empty()); }

TEST(Anomalies, TeleportFlagged) {
  auto clip = swaying_clip();
  clip.pose(1, 40)(0) += 1.0;
  const auto report = detect_anomalies(clip, SkeletonDef::smpl());
  EXPECT_TRUE(report.flagged(40));
  for (const auto& f : report.flags) {
    EXPECT_EQ(f.dancer, 1);
    EXPECT_GE(f.magnitude, 10.0);
  }
  EXPECT_FALSE(report.flagged(20));
}

TEST(Anomalies, InfiniteThresholdsNeverFlag) {
  Rng rng(4);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_TRUE(detect_anomalies(random_dance(2, 10, rng), SkeletonDef::smpl(), {inf, inf}).empty());
}

TEST(Anomalies, ShortGapInterpolated) {
  auto clip = swaying_clip(2, 3.0);
  const auto clean = clip;
  clip.pose(0, 40)(0) += 1.0;
  const auto report = detect_anomalies(clip, SkeletonDef::smpl());
  const auto segs = repair_anomalies(clip, report);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].sequence.frames, clip.frames);
  EXPECT_LT(std::abs(segs[0].sequence.pose(0, 40)(0) - clean.pose(0, 40)(0)), 0.05);
  validate(segs[0].sequence);
}

TEST(Anomalies, LongGapSplitsClip) {
  const auto clip = swaying_clip(1, 4.0);
  AnomalyReport report;
  for (int t = 50; t < 70; ++t) report.flags.push_back({0, t, AnomalySignal::Velocity, 20.0});
  const auto segs = repair_anomalies(clip, report, 15);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].start, 0);
  EXPECT_EQ(segs[0].sequence.frames, 50);
  EXPECT_EQ(segs[1].start, 70);
  EXPECT_EQ(segs[1].sequence.frames, clip.frames - 70);
}

TEST(Preprocess, EndToEndGroundsSegments) {
  const auto skel = SkeletonDef::smpl();
  auto clip = swaying_clip();
  clip.data.col(kVerticalAxis).array() += 0.5;
  const auto res = preprocess_clip(raw_from_sequence(clip, "clipA"), skel);
  EXPECT_EQ(res.anomalies.clip, "clipA");
  ASSERT_EQ(res.segments.size(), 1u);
  EXPECT_NEAR(min_foot_height(res.segments[0].sequence, skel), 0.0, 1e-9);
}

TEST(Split, EightyFiveFifteen) {
  const auto out = make_split(numbered_manifest(100), {{"train", 0.85}, {"test", 0.15}}, 7);
  EXPECT_EQ(out.subset("train").size(), 85u);
  EXPECT_EQ(out.subset("test").size(), 15u);
}

TEST(Split, SeededAndPartitioning) {
  const auto a = make_split(numbered_manifest(37), {{"train", 0.7}, {"val", 0.1}, {"test", 0.2}}, 3);
  const auto b = make_split(numbered_manifest(37), {{"train", 0.7}, {"val", 0.1}, {"test", 0.2}}, 3);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const char* s : {"train", "val", "test"}) {
    const auto sub = a.subset(s);
    total += sub.size();
    for (const auto& c : sub) EXPECT_TRUE(seen.insert(c.name).second);
  }
  EXPECT_EQ(total, 37u);
  for (std::size_t k = 0; k < a.clips.size(); ++k) EXPECT_EQ(a.clips[k].split, b.clips[k].split);
}

TEST(Split, RejectsBadFractions) {
  EXPECT_THROW(make_split(numbered_manifest(4), {{"train", 0.5}, {"test", 0.4}}, 0), DataError);
  EXPECT_THROW(make_split(numbered_manifest(4), {{"train", 1.2}, {"test", -0.2}}, 0), DataError);
  EXPECT_THROW(make_split(DatasetManifest{}, {{"train", 1.0}}, 0), DataError);
}

TEST(Split, LargestRemainderCounts) {
  EXPECT_EQ(split_counts(10, {0.85, 0.15}), (std::vector<int>{9, 1}));
  EXPECT_EQ(split_counts(8, {0.85, 0.15}), (std::vector<int>{7, 1}));
  EXPECT_EQ(split_counts(3, {1.0 / 3, 1.0 / 3, 1.0 / 3}), (std::vector<int>{1, 1, 1}));
}
