// Command-line front end. Exit codes:
//   0 success, 1 unexpected error, 2 usage or config error,
//   3 missing input file, 4 malformed input, 5 training aborted on NaN.
#include "cohedance/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace cd = cohedance;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kUsage = 2, kMissing = 3, kFormat = 4, kAborted = 5 };

struct Common {
  std::string config;
  std::int64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
};

cd::RunConfig resolve(const Common& c) {
  cd::RunConfig cfg;
  if (!c.config.empty()) cfg.load_file(c.config);
  for (const auto& kv : c.overrides) cfg.apply_override(kv);
  if (c.seed_set) cfg.set("seed", std::to_string(c.seed));
  return cfg;
}

int report(const char* kind, const std::exception& e, int code) {
  std::cerr << "cohedance: " << kind << ": " << e.what() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Music-driven group dance generation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config, "Config file of key = value lines");
  auto* seed_opt = app.add_option("--seed", common.seed, "Root seed");
  app.add_option("--set", common.overrides, "Config override key=value (repeatable)");

  std::string out;

  auto* synth = app.add_subcommand("synth", "Write a synthetic paired corpus and manifest");
  synth->add_option("--out", out, "Output directory")->required();

  std::string in_dir;
  auto* pre = app.add_subcommand("preprocess", "Smooth, ground, repair and split raw motion clips");
  pre->add_option("--in", in_dir, "Directory of raw GDNC clips")->required();
  pre->add_option("--out", out, "Output directory")->required();

  std::string manifest;
  auto* train = app.add_subcommand("train", "Train the generators and discriminators");
  train->add_option("--manifest", manifest, "Dataset manifest")->required();
  train->add_option("--out", out, "Output directory")->required();

  std::string checkpoint, music, init;
  auto* gen = app.add_subcommand("generate", "Generate group dance from music with Music2Dance");
  gen->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  gen->add_option("--music", music, "Music feature file (MFTR)")->required();
  gen->add_option("--init", init, "Initial poses (GDNC, first frame used)")->required();
  gen->add_option("--out", out, "Output GDNC file")->required();

  std::string reference, generated, eval_ckpt, retrieval;
  auto* eval = app.add_subcommand("evaluate", "Score generated dances against a reference corpus");
  eval->add_option("--reference", reference, "Reference manifest")->required();
  auto* gen_opt = eval->add_option("--generated", generated, "Directory of generated GDNC files named after clips");
  auto* ck_opt = eval->add_option("--checkpoint", eval_ckpt, "Generate from this checkpoint instead");
  gen_opt->excludes(ck_opt);
  eval->add_option("--retrieval", retrieval, "Pretrained retrieval checkpoint");
  eval->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  common.seed_set = seed_opt->count() > 0;

  try {
    const cd::RunConfig cfg = resolve(common);
    if (*synth) {
      cd::cmd_synth(cfg, out);
    } else if (*pre) {
      cd::cmd_preprocess(in_dir, out, cfg);
    } else if (*train) {
      cd::cmd_train(manifest, cfg, out);
    } else if (*gen) {
      cd::cmd_generate(checkpoint, music, init, out, cfg);
    } else if (*eval) {
      cd::EvaluateInputs in;
      in.reference_manifest = reference;
      if (gen_opt->count()) in.generated_dir = generated;
      if (ck_opt->count()) in.checkpoint = eval_ckpt;
      if (!retrieval.empty()) in.retrieval = retrieval;
      cd::cmd_evaluate(in, cfg, out);
    }
  } catch (const cd::ConfigError& e) {
    return report("config error", e, kUsage);
  } catch (const cd::MissingFileError& e) {
    return report("missing file", e, kMissing);
  } catch (const cd::FormatError& e) {
    return report("format error", e, kFormat);
  } catch (const cd::TrainingAborted& e) {
    return report("training aborted", e, kAborted);
  } catch (const std::exception& e) {
    return report("error", e, kOther);
  }
  return kOk;
}
