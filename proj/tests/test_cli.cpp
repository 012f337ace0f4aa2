#include "cohedance/commands.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

using namespace cohedance;
using namespace testing_support;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  for (const char* kv : {"model.dim=8", "model.heads=2", "model.layers=1", "disc.dim=8", "disc.heads=2", "disc.layers=1",
                         "train.epochs=2", "train.batch=4", "synth.count=6", "synth.min_duration=2", "synth.max_duration=2",
                         "retrieval.dim=8", "retrieval.heads=2", "retrieval.embed=8", "retrieval.steps=3",
                         "retrieval.batch=4", "retrieval.segment=30", "evaluate.split=all"})
    c.apply_override(kv);
  return c;
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(COHEDANCE_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Commands, SynthTrainGenerateEvaluate) {
  const auto dir = scratch_dir("pipeline");
  const RunConfig cfg = tiny_config();
  const auto manifest = cmd_synth(cfg, dir / "data");
  ASSERT_EQ(manifest.clips.size(), 6u);
  EXPECT_EQ(manifest.subset("train").size() + manifest.subset("test").size(), 6u);
  EXPECT_TRUE(fs::exists(dir / "data" / "clips" / "clip_0000.json"));

  const auto summary = cmd_train(dir / "data" / "manifest.json", cfg, dir / "run");
  EXPECT_GT(summary.steps, 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.cdck"));
  EXPECT_TRUE(fs::exists(dir / "run" / "config.resolved.txt"));
  const std::string csv = io_detail::read_file(dir / "run" / "loss.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), loss_csv_header());
  EXPECT_EQ(static_cast<long>(std::count(csv.begin(), csv.end(), '\n')), summary.steps + 1);

  const auto& clip = manifest.clips.front();
  const auto out = cmd_generate(dir / "run" / "checkpoint.cdck", dir / "data" / clip.music, dir / "data" / clip.motion,
                                dir / "gen" / "x.gdnc", cfg);
  const auto ref = read_gdnc(dir / "data" / clip.motion);
  EXPECT_EQ(out.frames, ref.frames);
  EXPECT_EQ(out.dancers, ref.dancers);
  EXPECT_EQ(encode_gdnc(read_gdnc(dir / "gen" / "x.gdnc")), encode_gdnc(out));

  EvaluateInputs in;
  in.reference_manifest = dir / "data" / "manifest.json";
  in.checkpoint = dir / "run" / "checkpoint.cdck";
  const auto ev = cmd_evaluate(in, cfg, dir / "eval");
  EXPECT_EQ(ev.report.clips, 6);
  EXPECT_TRUE(fs::exists(dir / "eval" / "metrics.json"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "per_clip.csv"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "retrieval.cdck"));
  const json metrics = json::parse(io_detail::read_file(dir / "eval" / "metrics.json"));
  EXPECT_GE(metrics.at("fid").get<double>(), 0.0);
  EXPECT_LE(metrics.at("mda").get<double>(), 1.0);

  // Real against real with the saved retrieval model.
  fs::create_directories(dir / "real");
  for (const auto& c : manifest.clips) fs::copy_file(dir / "data" / c.motion, dir / "real" / (c.name + ".gdnc"));
  EvaluateInputs real;
  real.reference_manifest = in.reference_manifest;
  real.generated_dir = dir / "real";
  real.retrieval = dir / "eval" / "retrieval.cdck";
  const auto rr = cmd_evaluate(real, cfg, dir / "eval_real");
  EXPECT_NEAR(rr.report.m_dist, 0.0, 1e-12);
  EXPECT_NEAR(rr.report.fid, 0.0, 1e-4);
  EXPECT_FALSE(fs::exists(dir / "eval_real" / "retrieval.cdck"));
}

TEST(Commands, GenerateHonoursHorizon) {
  const auto dir = scratch_dir("horizon");
  RunConfig cfg = tiny_config();
  cfg.apply_override("synth.count=2");
  cfg.apply_override("train.epochs=1");
  const auto manifest = cmd_synth(cfg, dir);
  cmd_train(dir / "manifest.json", cfg, dir / "run");
  cfg.apply_override("generate.horizon=10");
  const auto& clip = manifest.clips.front();
  const auto out = cmd_generate(dir / "run" / "checkpoint.cdck", dir / clip.music, dir / clip.motion, dir / "g.gdnc", cfg);
  EXPECT_EQ(out.frames, 11);
}

TEST(Commands, PreprocessSplitsAndGrounds) {
  const auto dir = scratch_dir("preprocess");
  RunConfig cfg = tiny_config();
  cfg.apply_override("synth.count=3");
  cmd_synth(cfg, dir / "raw");
  auto bad = read_gdnc(dir / "raw" / "clips" / "clip_0001.gdnc");
  for (int t = 20; t < 40; ++t) bad.pose(0, t)(0) += (t % 2 == 0 ? 1.0 : -1.0);
  write_gdnc(dir / "raw" / "clips" / "clip_0001.gdnc", bad);

  const auto manifest = cmd_preprocess(dir / "raw", dir / "clean", cfg);
  EXPECT_EQ(manifest.clips.size(), 4u);
  bool split_seen = false;
  for (const auto& c : manifest.clips) {
    split_seen |= c.name.find("clip_0001_s") == 0;
    EXPECT_FALSE(c.music.empty());
    const auto seq = read_gdnc(dir / "clean" / c.motion);
    EXPECT_NEAR(min_foot_height(seq, SkeletonDef::smpl()), 0.0, 1e-5);
    EXPECT_EQ(read_mftr(dir / "clean" / c.music).frames(), seq.frames);
  }
  EXPECT_TRUE(split_seen);
  const json anomalies = json::parse(io_detail::read_file(dir / "clean" / "anomalies.json"));
  EXPECT_EQ(anomalies.size(), 3u);
}

TEST(Commands, EvaluateNeedsTwoClips) {
  const auto dir = scratch_dir("eval_small");
  RunConfig cfg = tiny_config();
  cfg.apply_override("synth.count=3");
  cfg.apply_override("evaluate.split=test");
  cmd_synth(cfg, dir);
  EvaluateInputs in;
  in.reference_manifest = dir / "manifest.json";
  in.generated_dir = dir / "clips";
  EXPECT_THROW(cmd_evaluate(in, cfg, dir / "eval"), ConfigError);
}

TEST(Commands, ConfigValidationErrors) {
  RunConfig cfg;
  cfg.apply_override("model.dim=10");
  EXPECT_THROW(generator_config(cfg), ConfigError);
  RunConfig split;
  split.apply_override("split.train=0.9");
  EXPECT_THROW(split_fractions(split), ConfigError);
}

TEST(Tool, ExitCodes) {
  const auto dir = scratch_dir("tool");
  EXPECT_EQ(run_tool("--help"), 0);
  EXPECT_EQ(run_tool(""), 2);
  EXPECT_EQ(run_tool("bogus"), 2);
  EXPECT_EQ(run_tool("--set nope.key=1 synth --out " + (dir / "a").string()), 2);
  EXPECT_EQ(run_tool("--set model.dim=x synth --out " + (dir / "a").string()), 2);
  EXPECT_EQ(run_tool("generate --checkpoint " + (dir / "missing.cdck").string() + " --music m --init i --out o"), 3);
  io_detail::write_file(dir / "broken.gdnc", "GDNC nonsense");
  io_detail::write_file(dir / "in" / "broken.gdnc", "GDNC nonsense");
  EXPECT_EQ(run_tool("preprocess --in " + (dir / "in").string() + " --out " + (dir / "out").string()), 4);
  EXPECT_EQ(run_tool("--set synth.count=2 synth --out " + (dir / "ok").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "manifest.json"));
}
