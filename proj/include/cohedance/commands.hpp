// Pipeline commands behind the `cohedance` tool. Each command reads and
// writes files only; errors surface as typed exceptions that the tool maps
// to exit codes.
#pragma once

#include "cohedance/config.hpp"
#include "cohedance/datapipe.hpp"
#include "cohedance/discriminators.hpp"
#include "cohedance/generators.hpp"
#include "cohedance/io.hpp"
#include "cohedance/metrics.hpp"
#include "cohedance/retrieval.hpp"
#include "cohedance/synth.hpp"
#include "cohedance/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cohedance {

// ---------------------------------------------------------------------------
// Logging (level from COHEDANCE_LOG: quiet, info, debug)

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
  const char* v = std::getenv("COHEDANCE_LOG");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::Quiet;
  if (s == "debug" || s == "2") return LogLevel::Debug;
  return LogLevel::Info;
}

inline void log(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) <= static_cast<int>(log_level())) std::cerr << msg << '\n';
}

inline void log_config(const std::string& command, const RunConfig& cfg) {
  std::istringstream in(cfg.dump());
  std::string line;
  log(LogLevel::Info, "[" + command + "] resolved config:");
  while (std::getline(in, line)) log(LogLevel::Info, "  " + line);
}

// ---------------------------------------------------------------------------
// Config translation

inline GeneratorConfig generator_config(const RunConfig& c) {
  GeneratorConfig g;
  g.attn = {static_cast<int>(c.integer("model.dim")), static_cast<int>(c.integer("model.heads")), static_cast<int>(c.integer("model.ffn_mult"))};
  g.layers = static_cast<int>(c.integer("model.layers"));
  g.residual_dance = c.boolean("model.residual_dance");
  g.residual_music = c.boolean("model.residual_music");
  g.head_gain = c.real("model.head_gain");
  try {
    g.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  return g;
}

inline DiscriminatorConfig discriminator_config(const RunConfig& c) {
  DiscriminatorConfig d;
  d.attn = {static_cast<int>(c.integer("disc.dim")), static_cast<int>(c.integer("disc.heads")), static_cast<int>(c.integer("model.ffn_mult"))};
  d.layers = static_cast<int>(c.integer("disc.layers"));
  try {
    d.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  return d;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.epochs = static_cast<int>(c.integer("train.epochs"));
  t.batch_size = static_cast<int>(c.integer("train.batch"));
  t.lr_g = c.real("train.lr_g");
  t.lr_d = c.real("train.lr_d");
  t.grad_clip = c.real("train.grad_clip");
  t.seed = derive_seed(c.seed(), "train");
  t.schedule_total = c.integer("train.schedule_total");
  t.weights = {c.real("train.w_rec"), c.real("train.w_cyc"), c.real("train.w_fd"), c.real("train.w_vel")};
  t.cycle = c.boolean("train.cycle");
  t.adversarial = c.boolean("train.adversarial");
  t.scheduled_sampling = c.boolean("train.scheduled_sampling");
  t.saturating_fool = c.boolean("train.saturating_fool");
  if (t.epochs < 1 || t.batch_size < 1) throw ConfigError("train.epochs and train.batch must be positive");
  if (!(t.lr_g > 0.0) || !(t.lr_d > 0.0)) throw ConfigError("learning rates must be positive");
  return t;
}

inline RetrievalConfig retrieval_config(const RunConfig& c) {
  RetrievalConfig r;
  r.attn = {static_cast<int>(c.integer("retrieval.dim")), static_cast<int>(c.integer("retrieval.heads")), 2};
  r.layers = static_cast<int>(c.integer("retrieval.layers"));
  r.embed_dim = static_cast<int>(c.integer("retrieval.embed"));
  r.temperature = c.real("retrieval.temperature");
  r.segment = static_cast<int>(c.integer("retrieval.segment"));
  r.steps = static_cast<int>(c.integer("retrieval.steps"));
  r.batch = static_cast<int>(c.integer("retrieval.batch"));
  r.lr = c.real("retrieval.lr");
  r.seed = derive_seed(c.seed(), "retrieval");
  try {
    r.attn.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  if (r.layers < 1 || r.embed_dim < 1 || r.segment < 1 || r.steps < 0 || r.batch < 2 || !(r.temperature > 0.0))
    throw ConfigError("retrieval settings out of range");
  return r;
}

inline AlignmentOptions alignment_options(const RunConfig& c) {
  AlignmentOptions a;
  a.sigma = c.real("metric.sigma");
  if (c.integer("metric.lead") >= 0) a.lead_dancer = static_cast<int>(c.integer("metric.lead"));
  a.ordered_pairs = c.boolean("metric.ordered_pairs");
  return a;
}

inline std::vector<std::pair<std::string, double>> split_fractions(const RunConfig& c) {
  const double train = c.real("split.train"), test = c.real("split.test");
  if (train < 0.0 || test < 0.0 || std::abs(train + test - 1.0) > 1e-9)
    throw ConfigError("split.train and split.test must be non-negative and sum to 1");
  return {{"train", train}, {"test", test}};
}

inline json generator_meta(const GeneratorConfig& g) {
  return json{{"dim", g.attn.model_dim},         {"heads", g.attn.num_heads},           {"ffn_mult", g.attn.ffn_mult},
              {"layers", g.layers},              {"residual_dance", g.residual_dance}, {"residual_music", g.residual_music},
              {"head_gain", g.head_gain}};
}

inline GeneratorConfig generator_from_meta(const json& j) {
  try {
    GeneratorConfig g;
    g.attn = {j.at("dim").get<int>(), j.at("heads").get<int>(), j.at("ffn_mult").get<int>()};
    g.layers = j.at("layers").get<int>();
    g.residual_dance = j.at("residual_dance").get<bool>();
    g.residual_music = j.at("residual_music").get<bool>();
    g.head_gain = j.at("head_gain").get<double>();
    g.validate();
    return g;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data loading

struct LoadedClip {
  ClipEntry entry;
  MusicFeatureSequence music;
  GroupDanceSequence dance;
};

/// Clips of the named split; all clips when no clip carries that label.
inline std::vector<ClipEntry> select_split(const DatasetManifest& m, const std::string& split) {
  const bool labelled = std::any_of(m.clips.begin(), m.clips.end(), [](const ClipEntry& e) { return !e.split.empty(); });
  return labelled ? m.subset(split) : m.clips;
}

inline LoadedClip load_clip(const fs::path& base, const ClipEntry& e, bool need_music) {
  LoadedClip c;
  c.entry = e;
  c.dance = read_gdnc(base / e.motion);
  if (!e.music.empty()) {
    c.music = read_mftr(base / e.music);
  } else if (need_music) {
    throw FormatError("manifest clip '" + e.name + "' has no music file");
  }
  return c;
}

// ---------------------------------------------------------------------------
// synth

inline DatasetManifest cmd_synth(const RunConfig& cfg, const fs::path& out_dir) {
  log_config("synth", cfg);
  SynthRanges ranges;
  ranges.min_duration = cfg.real("synth.min_duration");
  ranges.max_duration = cfg.real("synth.max_duration");
  ranges.min_dancers = static_cast<int>(cfg.integer("synth.min_dancers"));
  ranges.max_dancers = static_cast<int>(cfg.integer("synth.max_dancers"));
  ranges.amplitude = cfg.real("synth.amplitude");
  if (ranges.min_dancers < 1 || ranges.max_dancers < ranges.min_dancers) throw ConfigError("synth dancer range is invalid");
  if (!(ranges.min_duration > 0.0) || ranges.max_duration < ranges.min_duration) throw ConfigError("synth duration range is invalid");
  const int count = static_cast<int>(cfg.integer("synth.count"));
  if (count < 1) throw ConfigError("synth.count must be >= 1");

  const auto clips = make_paired_dataset(count, ranges, derive_seed(cfg.seed(), "synth"));
  DatasetManifest manifest;
  for (const auto& c : clips) {
    ClipEntry e;
    e.name = c.name;
    e.motion = "clips/" + c.name + ".gdnc";
    e.music = "clips/" + c.name + ".mftr";
    e.genre = "tempo_" + std::to_string(c.spec.beat_period());
    e.dancers = c.dance.dancers;
    e.frames = c.dance.frames;
    e.duration = c.dance.frames / c.dance.fps;
    write_gdnc(out_dir / e.motion, c.dance);
    write_sidecar(out_dir / e.motion, {c.name, e.genre, "synth"});
    write_mftr(out_dir / e.music, c.music);
    manifest.clips.push_back(e);
  }
  manifest = make_split(manifest, split_fractions(cfg), derive_seed(cfg.seed(), "split"));
  write_manifest(out_dir / "manifest.json", manifest);
  log(LogLevel::Info, "[synth] wrote " + std::to_string(count) + " clips to " + out_dir.string());
  return manifest;
}

// ---------------------------------------------------------------------------
// preprocess

inline DatasetManifest cmd_preprocess(const fs::path& in_dir, const fs::path& out_dir, const RunConfig& cfg) {
  log_config("preprocess", cfg);
  if (!fs::is_directory(in_dir)) throw MissingFileError("input directory not found: " + in_dir.string());
  PreprocessOptions opt;
  opt.smoothing = {cfg.real("preprocess.alpha_rotation"), cfg.real("preprocess.alpha_translation")};
  opt.thresholds = {cfg.real("preprocess.vel_thresh"), cfg.real("preprocess.acc_thresh")};
  opt.max_gap = static_cast<int>(cfg.integer("preprocess.max_gap"));
  const SkeletonDef skel = SkeletonDef::smpl();

  std::vector<fs::path> inputs;
  for (const auto& entry : fs::recursive_directory_iterator(in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".gdnc") inputs.push_back(entry.path());
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw MissingFileError("no .gdnc files under " + in_dir.string());

  DatasetManifest manifest;
  json anomalies = json::array();
  for (const auto& path : inputs) {
    const std::string stem = path.stem().string();
    const GroupDanceSequence raw = read_gdnc(path);
    const MotionSidecar side = read_sidecar(path);
    fs::path music_path = path;
    music_path.replace_extension(".mftr");
    std::optional<MusicFeatureSequence> music;
    if (fs::exists(music_path)) music = read_mftr(music_path);

    PreprocessResult res = preprocess_clip(raw_from_sequence(raw, stem), skel, opt);
    anomalies.push_back(to_json(res.anomalies));
    for (std::size_t k = 0; k < res.segments.size(); ++k) {
      const MotionSegment& seg = res.segments[k];
      ClipEntry e;
      e.name = res.segments.size() == 1 ? stem : stem + "_s" + std::to_string(k);
      e.motion = "clips/" + e.name + ".gdnc";
      e.genre = side.genre;
      e.dancers = seg.sequence.dancers;
      e.frames = seg.sequence.frames;
      e.duration = seg.sequence.frames / seg.sequence.fps;
      write_gdnc(out_dir / e.motion, seg.sequence);
      write_sidecar(out_dir / e.motion, {e.name, side.genre, side.source.empty() ? stem : side.source});
      if (music && music->frames() >= seg.start + seg.sequence.frames) {
        e.music = "clips/" + e.name + ".mftr";
        write_mftr(out_dir / e.music, music->slice_frames(seg.start, seg.sequence.frames));
      }
      manifest.clips.push_back(e);
    }
    log(LogLevel::Debug, "[preprocess] " + stem + ": " + std::to_string(res.segments.size()) + " segment(s), " +
                             std::to_string(res.anomalies.flags.size()) + " flag(s)");
  }
  if (manifest.clips.empty()) throw FormatError("preprocess: every clip was rejected");
  manifest = make_split(manifest, split_fractions(cfg), derive_seed(cfg.seed(), "split"));
  write_manifest(out_dir / "manifest.json", manifest);
  io_detail::write_file(out_dir / "anomalies.json", anomalies.dump(2) + "\n");
  return manifest;
}

// ---------------------------------------------------------------------------
// train

inline Checkpoint make_checkpoint(const ModelSet<float>& models, const GeneratorConfig& g, const DiscriminatorConfig& d, long step) {
  Checkpoint ck;
  ck.meta = json{{"kind", "cohedance-models"},
                 {"generator", generator_meta(g)},
                 {"discriminator", json{{"dim", d.attn.model_dim}, {"heads", d.attn.num_heads}, {"layers", d.layers}}},
                 {"step", step}};
  ck.add(models.m2d.params());
  ck.add(models.d2m.params());
  ck.add(models.disc_music.params());
  ck.add(models.disc_dance.params());
  return ck;
}

/// Pairs for training, optionally cut into consecutive windows.
inline std::vector<TrainingPair> training_pairs(const fs::path& base, const std::vector<ClipEntry>& clips, int window) {
  std::vector<TrainingPair> out;
  for (const auto& e : clips) {
    LoadedClip c = load_clip(base, e, true);
    const int t = std::min(c.music.frames(), c.dance.frames);
    if (window > 0 && t > window) {
      for (int s = 0; s + window <= t; s += window)
        out.push_back({e.name + "@" + std::to_string(s), c.music.slice_frames(s, window), c.dance.slice_frames(s, window)});
    } else {
      out.push_back({e.name, c.music.slice_frames(0, t), c.dance.slice_frames(0, t)});
    }
  }
  return out;
}

struct TrainSummary {
  long steps = 0;
  LossReport last;
  fs::path checkpoint;
  fs::path loss_log;
};

inline TrainSummary cmd_train(const fs::path& manifest_path, const RunConfig& cfg, const fs::path& out_dir) {
  log_config("train", cfg);
  const DatasetManifest manifest = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  const auto pairs = training_pairs(base, select_split(manifest, "train"), static_cast<int>(cfg.integer("train.window")));
  if (pairs.empty()) throw FormatError("train: no usable clips");

  const GeneratorConfig gcfg = generator_config(cfg);
  const DiscriminatorConfig dcfg = discriminator_config(cfg);
  TrainConfig tcfg = train_config(cfg);
  const long per_epoch = static_cast<long>((pairs.size() + static_cast<std::size_t>(tcfg.batch_size) - 1) / static_cast<std::size_t>(tcfg.batch_size));
  if (tcfg.schedule_total <= 0) tcfg.schedule_total = per_epoch * tcfg.epochs;

  fs::create_directories(out_dir);
  io_detail::write_file(out_dir / "config.resolved.txt", cfg.dump());
  TrainSummary summary;
  summary.loss_log = out_dir / "loss.csv";
  summary.checkpoint = out_dir / "checkpoint.cdck";
  std::ofstream csv(summary.loss_log, std::ios::trunc);
  csv << loss_csv_header() << '\n';

  Trainer<float> trainer(gcfg, dcfg, tcfg);
  const long every = cfg.integer("train.checkpoint_every");
  try {
    trainer.fit(pairs, [&](const LossReport& r) {
      csv << loss_csv_row(r) << '\n';
      summary.last = r;
      summary.steps = r.step + 1;
      log(LogLevel::Debug, "[train] " + loss_csv_row(r));
      if (every > 0 && (r.step + 1) % every == 0)
        write_checkpoint(out_dir / ("checkpoint_" + std::to_string(r.step + 1) + ".cdck"), make_checkpoint(trainer.models(), gcfg, dcfg, r.step + 1));
    });
  } catch (const TrainingAborted& e) {
    csv << loss_csv_row(e.report()) << '\n';
    csv.flush();
    const LossReport& r = e.report();
    io_detail::write_file(out_dir / "abort.json", json{{"reason", e.what()}, {"step", r.step}, {"l_rec", r.l_rec}, {"l_cyc", r.l_cyc},
                                                       {"l_fd", r.l_fd}, {"l_g", r.l_g}, {"l_d", r.l_d}, {"p", r.p}}
                                                      .dump(2) + "\n");
    throw;
  }
  write_checkpoint(summary.checkpoint, make_checkpoint(trainer.models(), gcfg, dcfg, summary.steps));
  log(LogLevel::Info, "[train] " + std::to_string(summary.steps) + " steps, final " + loss_csv_row(summary.last));
  return summary;
}

// ---------------------------------------------------------------------------
// generate

inline Music2Dance<float> load_music2dance(const Checkpoint& ck) {
  if (!ck.meta.contains("generator")) throw FormatError("checkpoint has no generator metadata");
  Music2Dance<float> model(generator_from_meta(ck.meta.at("generator")), 0);
  ck.load_into(model.params());
  return model;
}

/// Output frame 0 is each dancer's initial pose; frame t >= 1 is predicted
/// from music frames 1..t. The result has as many frames as the music.
inline GroupDanceSequence generate_from_music(const Music2Dance<float>& model, const MusicFeatureSequence& music,
                                              const GroupDanceSequence& initial, int horizon = 0) {
  const int total = horizon > 0 ? std::min(horizon + 1, music.frames()) : music.frames();
  GroupDanceSequence init = initial.slice_frames(0, 1);
  GroupDanceSequence out(initial.dancers, total, music.fps);
  for (int i = 0; i < initial.dancers; ++i) out.pose(i, 0) = init.pose(i, 0);
  if (total > 1) {
    const GroupDanceSequence pred = generate(model, music.slice_frames(1, total - 1), init);
    for (int i = 0; i < initial.dancers; ++i)
      for (int t = 1; t < total; ++t) out.pose(i, t) = pred.pose(i, t - 1);
  }
  if (!out.data.allFinite()) throw TrainingAborted("generation produced non-finite poses", LossReport{});
  return out;
}

inline GroupDanceSequence cmd_generate(const fs::path& checkpoint, const fs::path& music_path, const fs::path& init_path,
                                       const fs::path& out_path, const RunConfig& cfg) {
  log_config("generate", cfg);
  const Checkpoint ck = read_checkpoint(checkpoint);
  const Music2Dance<float> model = load_music2dance(ck);
  const MusicFeatureSequence music = read_mftr(music_path);
  const GroupDanceSequence init = read_gdnc(init_path);
  GroupDanceSequence out = generate_from_music(model, music, init, static_cast<int>(cfg.integer("generate.horizon")));
  write_gdnc(out_path, out);
  log(LogLevel::Info, "[generate] wrote " + out_path.string() + " (" + std::to_string(out.dancers) + " dancers, " +
                          std::to_string(out.frames) + " frames)");
  return out;
}

// ---------------------------------------------------------------------------
// evaluate

inline Checkpoint retrieval_checkpoint(const RetrievalModel& m) {
  Checkpoint ck;
  const auto& c = m.config();
  ck.meta = json{{"kind", "cohedance-retrieval"}, {"dim", c.attn.model_dim}, {"heads", c.attn.num_heads}, {"layers", c.layers},
                 {"embed", c.embed_dim},          {"temperature", c.temperature}, {"segment", c.segment}};
  ck.add(m.params());
  return ck;
}

inline RetrievalModel load_retrieval(const Checkpoint& ck) {
  try {
    if (ck.meta.value("kind", "") != "cohedance-retrieval") throw FormatError("not a retrieval checkpoint");
    RetrievalConfig c;
    c.attn = {ck.meta.at("dim").get<int>(), ck.meta.at("heads").get<int>(), 2};
    c.layers = ck.meta.at("layers").get<int>();
    c.embed_dim = ck.meta.at("embed").get<int>();
    c.temperature = ck.meta.at("temperature").get<double>();
    c.segment = ck.meta.at("segment").get<int>();
    RetrievalModel m(c);
    ck.load_into(m.params());
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("retrieval checkpoint metadata: ") + e.what());
  }
}

struct EvaluateInputs {
  fs::path reference_manifest;
  std::optional<fs::path> generated_dir;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> retrieval;
};

inline CorpusEvaluation cmd_evaluate(const EvaluateInputs& in, const RunConfig& cfg, const fs::path& out_dir) {
  log_config("evaluate", cfg);
  if (in.generated_dir.has_value() == in.checkpoint.has_value())
    throw ConfigError("evaluate needs exactly one of a generated directory or a checkpoint");
  const DatasetManifest manifest = read_manifest(in.reference_manifest);
  const fs::path base = in.reference_manifest.parent_path();

  std::optional<Music2Dance<float>> model;
  if (in.checkpoint) model = load_music2dance(read_checkpoint(*in.checkpoint));
  if (in.generated_dir && !fs::is_directory(*in.generated_dir)) throw MissingFileError("generated directory not found: " + in.generated_dir->string());

  const std::string split = cfg.text("evaluate.split");
  const auto chosen = split == "all" ? manifest.clips : select_split(manifest, split);
  if (chosen.size() < 2)
    throw ConfigError("evaluate: split '" + split + "' has " + std::to_string(chosen.size()) +
                      " clip(s); at least 2 are needed (set evaluate.split=all or enlarge the corpus)");
  std::vector<EvalClip> clips;
  for (const auto& e : chosen) {
    LoadedClip c = load_clip(base, e, true);
    EvalClip ec{e.name, c.music, c.dance, {}};
    if (model) {
      ec.generated = generate_from_music(*model, c.music, c.dance);
    } else {
      ec.generated = read_gdnc(*in.generated_dir / (e.name + ".gdnc"));
    }
    clips.push_back(std::move(ec));
  }

  RetrievalModel retrieval;
  if (in.retrieval) {
    retrieval = load_retrieval(read_checkpoint(*in.retrieval));
  } else {
    std::vector<RetrievalPair> data;
    for (const auto& e : select_split(manifest, "train")) {
      LoadedClip c = load_clip(base, e, true);
      data.push_back({c.music, c.dance});
    }
    retrieval = train_retrieval(data, retrieval_config(cfg));
  }

  const CorpusEvaluation ev = evaluate_corpus(retrieval, clips, SkeletonDef::smpl(), alignment_options(cfg));
  fs::create_directories(out_dir);
  io_detail::write_file(out_dir / "config.resolved.txt", cfg.dump());
  if (!in.retrieval) write_checkpoint(out_dir / "retrieval.cdck", retrieval_checkpoint(retrieval));
  io_detail::write_file(out_dir / "metrics.json", to_json(ev.report).dump(2) + "\n");
  std::ostringstream csv;
  csv.precision(9);
  csv << "clip,m_dist,mm_dist,mda,gda\n";
  for (const auto& c : ev.clips) csv << c.name << ',' << c.m_dist << ',' << c.mm_dist << ',' << c.mda << ',' << c.gda << '\n';
  io_detail::write_file(out_dir / "per_clip.csv", csv.str());
  log(LogLevel::Info, "[evaluate] " + to_json(ev.report).dump());
  return ev;
}

}  // namespace cohedance
