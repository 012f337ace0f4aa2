#include "cohedance/config.hpp"
#include "cohedance/io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace cohedance;
using namespace testing_support;

namespace {

std::string patched(std::string bytes, std::size_t offset, std::uint32_t value) {
  for (int k = 0; k < 4; ++k) bytes[offset + k] = static_cast<char>((value >> (8 * k)) & 0xFFu);
  return bytes;
}

}  // namespace

TEST(Gdnc, RoundTripPreservesFloatValues) {
  Rng rng(1);
  const auto d = random_dance(3, 7, rng);
  const std::string bytes = encode_gdnc(d);
  EXPECT_EQ(bytes.size(), 24u + 3u * 7u * 147u * 4u);
  const auto back = decode_gdnc(bytes);
  EXPECT_EQ(back.dancers, 3);
  EXPECT_EQ(back.frames, 7);
  EXPECT_FLOAT_EQ(static_cast<float>(back.fps), 30.0f);
  EXPECT_TRUE(back.data.isApprox(d.data.cast<float>().cast<double>(), 0.0));
  EXPECT_EQ(encode_gdnc(back), bytes);
}

TEST(Gdnc, HeaderLayout) {
  GroupDanceSequence d(2, 3);
  const std::string bytes = encode_gdnc(d);
  EXPECT_EQ(bytes.substr(0, 4), "GDNC");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 147);
}

TEST(Gdnc, MalformedInputsRejected) {
  const std::string good = encode_gdnc(GroupDanceSequence(1, 2));
  EXPECT_THROW(decode_gdnc("XXXX" + good.substr(4)), FormatError);
  EXPECT_THROW(decode_gdnc(patched(good, 4, 2)), FormatError);
  EXPECT_THROW(decode_gdnc(patched(good, 16, 146)), FormatError);
  EXPECT_THROW(decode_gdnc(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(decode_gdnc(good + "x"), FormatError);
  EXPECT_THROW(decode_gdnc(good.substr(0, 10)), FormatError);
}

TEST(Gdnc, MissingFile) { EXPECT_THROW(read_gdnc("/nonexistent/clip.gdnc"), MissingFileError); }

TEST(Mftr, RoundTrip) {
  Rng rng(2);
  const auto m = random_music(9, rng);
  const auto dir = scratch_dir("mftr");
  write_mftr(dir / "a.mftr", m);
  const auto back = read_mftr(dir / "a.mftr");
  EXPECT_EQ(back.frames(), 9);
  EXPECT_EQ(encode_mftr(back), encode_mftr(m));
}

TEST(Mftr, WrongWidthRejected) {
  const std::string good = encode_mftr(MusicFeatureSequence(2));
  EXPECT_THROW(decode_mftr(patched(good, 12, 437)), FormatError);
  EXPECT_THROW(decode_gdnc(good), FormatError);
}

TEST(Checkpoint, RoundTripAndLoad) {
  Rng rng(3);
  ParamStore<float> store;
  store.values["a.w"] = random_matrix<float>(3, 4, rng);
  store.values["b"] = random_matrix<float>(1, 5, rng);
  Checkpoint ck;
  ck.meta = json{{"kind", "test"}, {"step", 12}};
  ck.add(store);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.meta, ck.meta);
  ParamStore<float> target;
  target.values["a.w"] = Mat<float>::Zero(3, 4);
  target.values["b"] = Mat<float>::Zero(1, 5);
  back.load_into(target);
  EXPECT_EQ(target.values, store.values);
}

TEST(Checkpoint, ShapeAndNameMismatch) {
  Checkpoint ck;
  ck.tensors["w"] = Mat<float>::Zero(2, 2);
  ParamStore<float> wrong_shape;
  wrong_shape.values["w"] = Mat<float>::Zero(3, 2);
  EXPECT_THROW(ck.load_into(wrong_shape), FormatError);
  ParamStore<float> wrong_name;
  wrong_name.values["v"] = Mat<float>::Zero(2, 2);
  EXPECT_THROW(ck.load_into(wrong_name), FormatError);
  EXPECT_THROW(decode_checkpoint("CDCK"), FormatError);
}

TEST(Manifest, JsonRoundTrip) {
  DatasetManifest m;
  m.split_seed = 42;
  m.fractions = {{"train", 0.75}, {"test", 0.25}};
  m.clips.push_back({"c0", "clips/c0.gdnc", "clips/c0.mftr", "tempo_15", 2.0, 2, 60, "train"});
  m.clips.push_back({"c1", "clips/c1.gdnc", "", "", 1.5, 3, 45, "test"});
  const auto dir = scratch_dir("manifest");
  write_manifest(dir / "manifest.json", m);
  const auto back = read_manifest(dir / "manifest.json");
  EXPECT_EQ(to_json(back), to_json(m));
  EXPECT_EQ(back.subset("test").front().dancers, 3);
}

TEST(Manifest, BrokenJsonIsFormatError) {
  const auto dir = scratch_dir("manifest_bad");
  io_detail::write_file(dir / "m.json", "{\"clips\": [");
  EXPECT_THROW(read_manifest(dir / "m.json"), FormatError);
  io_detail::write_file(dir / "m2.json", "{\"clips\": [{\"name\": 3}]}");
  EXPECT_THROW(read_manifest(dir / "m2.json"), FormatError);
}

TEST(Sidecar, RoundTripAndAbsence) {
  const auto dir = scratch_dir("sidecar");
  write_sidecar(dir / "x.gdnc", {"x", "tempo_12", "synth"});
  const auto s = read_sidecar(dir / "x.gdnc");
  EXPECT_EQ(s.genre, "tempo_12");
  EXPECT_EQ(read_sidecar(dir / "y.gdnc").name, "");
}

TEST(MetricReportJson, CarriesSchemaVersion) {
  MetricReport r;
  r.fid = 1.5;
  r.clips = 4;
  const json j = to_json(r);
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_EQ(j.at("fid"), 1.5);
  for (const char* k : {"m_dist", "mm_dist", "div", "mda", "gda"}) EXPECT_TRUE(j.contains(k));
}

TEST(RunConfig, DefaultsAndOverrides) {
  RunConfig c;
  EXPECT_EQ(c.integer("model.dim"), 64);
  EXPECT_EQ(c.real("metric.sigma"), 3.0);
  EXPECT_TRUE(c.boolean("train.cycle"));
  c.apply_override("model.dim = 32");
  c.apply_override("train.cycle=false");
  EXPECT_EQ(c.integer("model.dim"), 32);
  EXPECT_FALSE(c.boolean("train.cycle"));
  EXPECT_EQ(c.real("model.dim"), 32.0);
}

TEST(RunConfig, LoadTextWithComments) {
  RunConfig c;
  c.load_text("# header\nseed = 7  # trailing\n\nevaluate.split = all\n");
  EXPECT_EQ(c.seed(), 7u);
  EXPECT_EQ(c.text("evaluate.split"), "all");
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  EXPECT_THROW(c.set("model.depth", "3"), ConfigError);
  EXPECT_THROW(c.set("model.dim", "3.5"), ConfigError);
  EXPECT_THROW(c.set("train.lr_g", "fast"), ConfigError);
  EXPECT_THROW(c.set("train.cycle", "maybe"), ConfigError);
  EXPECT_THROW(c.apply_override("seed"), ConfigError);
  EXPECT_THROW(c.load_text("seed 3"), ConfigError);
  EXPECT_THROW(c.boolean("seed"), ConfigError);
  EXPECT_THROW(c.load_file("/nonexistent.cfg"), ConfigError);
}

TEST(RunConfig, DumpListsEveryKeySorted) {
  RunConfig c;
  const std::string d = c.dump();
  EXPECT_NE(d.find("seed = 0\n"), std::string::npos);
  EXPECT_LT(d.find("disc.dim"), d.find("model.dim"));
  EXPECT_EQ(static_cast<std::size_t>(std::count(d.begin(), d.end(), '\n')), c.values().size());
}
