#include "cohedance/synth.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace cohedance;

namespace {

std::vector<double> click_track(double bpm, double seconds, double sr) {
  std::vector<double> x(static_cast<std::size_t>(seconds * sr), 0.0);
  const double period = 60.0 / bpm;
  for (double t0 = 0.0; t0 < seconds; t0 += period) {
    const auto start = static_cast<std::size_t>(std::llround(t0 * sr));
    for (std::size_t k = 0; k < static_cast<std::size_t>(0.02 * sr) && start + k < x.size(); ++k) {
      const double t = k / sr;
      x[start + k] += std::exp(-t / 0.004) * std::sin(2.0 * M_PI * 1000.0 * t);
    }
  }
  return x;
}

}  // namespace

TEST(FeatureLayout, RangesPartitionTheVector) {
  int next = 0;
  for (const auto& r : FeatureLayout::ordered()) {
    EXPECT_EQ(r.begin, next);
    EXPECT_GT(r.size(), 0);
    next = r.end;
  }
  EXPECT_EQ(next, 438);
}

TEST(ExtractFeatures, OneSecondGivesThirtyRows) {
  std::vector<double> x(22050);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * M_PI * 440.0 * i / 22050.0);
  const auto m = extract_features(x, 22050.0);
  EXPECT_EQ(m.frames(), 30);
  EXPECT_EQ(m.feats.cols(), 438);
  EXPECT_NO_THROW(validate(m));
}

TEST(ExtractFeatures, SilenceHasNoOnsetsOrBeats) {
  const std::vector<double> x(22050 * 2, 0.0);
  const auto m = extract_features(x, 22050.0);
  EXPECT_LE(m.feats.col(FeatureLayout::onset_env.begin).maxCoeff(), 1e-6);
  EXPECT_EQ(m.feats.col(FeatureLayout::beat_onehot.begin).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ExtractFeatures, EmptyAudioIsRejected) {
  const std::vector<double> x;
  EXPECT_THROW(extract_features(x, 22050.0), AudioError);
}

TEST(ExtractFeatures, ClickTrackBeatsLandOnFifteenFrameGrid) {
  const auto m = extract_features(click_track(120.0, 8.0, 22050.0), 22050.0);
  const BeatSequence beats = music_beats(m);
  ASSERT_GE(beats.size(), 12u);
  for (int b : beats.frames) {
    const int off = b % 15;
    EXPECT_LE(std::min(off, 15 - off), 1) << "beat at frame " << b;
  }
  const auto& col = m.feats.col(FeatureLayout::beat_onehot.begin);
  for (Eigen::Index t = 0; t < col.size(); ++t) EXPECT_TRUE(col(t) == 0.0 || col(t) == 1.0);
}

TEST(MusicBeats, ZeroChannelIsEmpty) { EXPECT_TRUE(music_beats(MusicFeatureSequence(40)).empty()); }

TEST(MusicBeats, ReadsTheOneHotChannel) {
  MusicFeatureSequence m(40);
  for (int t : {0, 15, 30}) m.feats(t, FeatureLayout::beat_onehot.begin) = 1.0;
  EXPECT_EQ(music_beats(m).frames, (std::vector<int>{0, 15, 30}));
}

TEST(MusicBeats, SynthClickMusicAtNinetyBpm) {
  SynthSpec s;
  s.bpm = 90.0;
  s.duration = 4.0;
  const BeatSequence b = music_beats(make_click_music(s));
  EXPECT_EQ(b.frames, (std::vector<int>{0, 20, 40, 60, 80, 100}));
}
