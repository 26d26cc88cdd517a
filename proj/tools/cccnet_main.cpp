// cccnet command-line tool: corpus generation, per-phase training, inference,
// evaluation and density-map export.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "cccnet/binary_io.hpp"
#include "cccnet/config.hpp"
#include "cccnet/error.hpp"
#include "cccnet/eval.hpp"
#include "cccnet/pipeline.hpp"
#include "cccnet/synth.hpp"

namespace fs = std::filesystem;
using namespace cccnet;

namespace {

constexpr int kUsageExit = 2;
constexpr int kFailureExit = 1;

void error_line(std::string_view code, std::string_view message) {
  const nlohmann::json j = {{"code", code}, {"message", message}};
  std::cerr << "error: " << j.dump() << "\n";
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "key=value configuration file");
  cmd->add_option("--seed", c.seed, "run seed (overrides the config)");
  auto* o = cmd->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Categorized crowd counting: sitting and standing density maps"};
  app.require_subcommand(1);

  Common gen_c;
  std::size_t gen_scenes = 0;
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  add_common(gen, gen_c, true);
  gen->add_option("--scenes", gen_scenes, "number of scenes (default: config 'scenes')");

  Common train_c;
  std::string train_phase, train_data;
  bool train_resume = false;
  std::optional<std::size_t> train_stop;
  auto* train = app.add_subcommand("train", "train one phase");
  add_common(train, train_c, true);
  train->add_option("--phase", train_phase, "1 | 2 | 3-pre | 3-joint")->required();
  train->add_option("--data", train_data, "corpus directory")->required();
  train->add_flag("--resume", train_resume, "continue from saved training state");
  train->add_option("--stop-at", train_stop, "stop after this many epochs in total");
  bool train_quiet = false;
  train->add_flag("--quiet", train_quiet, "no per-epoch progress");

  Common infer_c;
  std::string infer_models, infer_image, infer_keypoints;
  auto* inf = app.add_subcommand("infer", "run the three phases on one image");
  add_common(inf, infer_c, true);
  inf->add_option("--models", infer_models, "model directory")->required();
  inf->add_option("--image", infer_image, "image file (.ccim)")->required();
  inf->add_option("--keypoints", infer_keypoints, "keypoint JSON (omit for none)");

  Common eval_c;
  std::string eval_models, eval_data;
  auto* ev = app.add_subcommand("eval", "evaluate SDBC and full-pipeline counts on the test split");
  add_common(ev, eval_c, true);
  ev->add_option("--models", eval_models, "model directory")->required();
  ev->add_option("--data", eval_data, "corpus directory")->required();

  Common pgm_c;
  std::string pgm_map;
  auto* pgm = app.add_subcommand("export-pgm", "write a density map as an 8-bit PGM");
  add_common(pgm, pgm_c, true);
  pgm->add_option("--map", pgm_map, "density map (.ccdm)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("usage_error", e.what());
    return kUsageExit;
  }

  try {
    if (*gen) {
      const PipelineConfig cfg = resolve(gen_c);
      const std::size_t n = gen_scenes ? gen_scenes : cfg.scenes;
      generate_corpus(gen_c.out, n, cfg.scene, cfg.seed);
      std::cout << nlohmann::json{{"scenes", n},
                                  {"checksum", hex64(directory_checksum(gen_c.out))}}
                       .dump()
                << "\n";
    } else if (*train) {
      const PipelineConfig cfg = resolve(train_c);
      const Phase phase = parse_phase(train_phase);
      const Dataset data = Dataset::load(train_data, cfg.kernel);
      RunOptions opts;
      opts.resume = train_resume;
      if (train_stop) opts.stop_at = *train_stop;
      if (!train_quiet) {
        opts.progress = [](const std::string& stage, const EpochRecord& r) {
          std::cerr << stage << " epoch " << r.epoch << " loss " << r.train_loss << " val "
                    << r.validation << " lr " << r.learning_rate << (r.escape ? " escape" : "")
                    << "\n";
        };
      }
      const PhaseResult res = run_phase(phase, data, cfg, train_c.out, opts);
      nlohmann::json arts = nlohmann::json::array();
      for (const auto& a : res.artifacts) arts.push_back(a.string());
      std::cout << nlohmann::json{{"phase", phase_name(phase)},
                                  {"complete", res.complete},
                                  {"artifacts", arts}}
                       .dump()
                << "\n";
    } else if (*inf) {
      const PipelineConfig cfg = resolve(infer_c);
      const ModelBundle models = load_bundle(infer_models, cfg);
      const Tensor image = read_image(infer_image);
      std::vector<KeypointRecord> kps;
      if (!infer_keypoints.empty()) kps = read_keypoints(infer_keypoints).persons;
      const Inference r = infer(models, image, kps, cfg);
      const fs::path out = infer_c.out;
      write_map(out / "crowd.ccdm", r.crowd);
      write_map(out / "final_sit.ccdm", r.final_sit);
      write_map(out / "final_stand.ccdm", r.final_stand);
      write_map(out / "basic_sit.ccdm", r.phase1.maps.sitting);
      write_map(out / "basic_stand.ccdm", r.phase1.maps.standing);
      const nlohmann::json counts = {{"sitting", r.sit()},
                                     {"standing", r.stand()},
                                     {"crowd", count(r.crowd)},
                                     {"sdbc_sitting", r.sdbc_sit()},
                                     {"sdbc_standing", r.sdbc_stand()}};
      binio::write_text(out / "counts.json", counts.dump(1) + "\n");
      std::cout << counts.dump() << "\n";
    } else if (*ev) {
      const PipelineConfig cfg = resolve(eval_c);
      const ModelBundle models = load_bundle(eval_models, cfg);
      const Dataset data = Dataset::load(eval_data, cfg.kernel);
      const EvalPair pair = evaluate(models, data, cfg);
      const fs::path out = eval_c.out;
      binio::write_text(out / "eval.json", reports_to_json(pair));
      binio::write_text(out / "eval.csv", reports_to_csv(pair));
      for (const EvalReport* r : {&pair.sdbc, &pair.cccnet}) {
        std::cout << nlohmann::json{{"mode", eval_mode_name(r->mode)},
                                    {"sitting_mae", r->sitting.mae},
                                    {"standing_mae", r->standing.mae},
                                    {"sitting_rmse", r->sitting.rmse},
                                    {"standing_rmse", r->standing.rmse}}
                         .dump()
                  << "\n";
      }
    } else if (*pgm) {
      resolve(pgm_c);
      write_pgm(pgm_c.out, read_map(pgm_map));
    }
  } catch (const ConfigError& e) {
    error_line(e.code(), e.what());
    return kUsageExit;
  } catch (const Error& e) {
    error_line(e.code(), e.what());
    return kFailureExit;
  } catch (const std::exception& e) {
    error_line("internal_error", e.what());
    return kFailureExit;
  }
  return 0;
}
