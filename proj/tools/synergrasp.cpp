#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "synergrasp/error.hpp"
#include "synergrasp/pipeline.hpp"

namespace fs = std::filesystem;
using namespace synergrasp;

int main(int argc, char** argv) {
  CLI::App app{"Category-level shape spaces and hand synergies for grasp inference"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string observation, out_dir;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Project config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Config override key.path=value (repeatable)");
  };

  auto* fixtures = app.add_subcommand("fixtures", "Write demo categories, the fixture hand and its grasp records");
  fixtures->add_option("-o,--out", out_dir, "Output directory")->required();

  auto* gen = app.add_subcommand("gen-models", "Generate training and held-out instances");
  auto* shape = app.add_subcommand("build-shape-space", "Register training instances and build the shape space");
  auto* infer_shape = app.add_subcommand("infer-shape", "Reconstruct an observed cloud through the shape space");
  auto* synergies = app.add_subcommand("build-synergies", "Build the hand synergy space from grasp records");
  auto* train = app.add_subcommand("train-learner", "Train the shape-to-synergy learner");
  auto* infer_grasp = app.add_subcommand("infer-grasp", "Infer a collision-free grasp for an observed cloud");
  auto* eval = app.add_subcommand("eval", "Run grasp inference on every held-out instance");
  for (auto* sub : {gen, shape, infer_shape, synergies, train, infer_grasp, eval}) add_config(sub);
  for (auto* sub : {infer_shape, infer_grasp}) {
    sub->add_option("-i,--observation", observation, "Observed point cloud (PLY)")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out_dir, "Output directory (default: <artifacts>/inference/<name>)");
  }

  CLI11_PARSE(app, argc, argv);

  const Logger log = [](const std::string& line) { std::cerr << line << std::endl; };
  try {
    if (fixtures->parsed()) {
      cmd_fixtures(out_dir, log);
      return 0;
    }
    const ProjectConfig cfg = load_config(config_path, overrides);
    auto output_dir = [&] {
      return out_dir.empty() ? cfg.artifacts / "inference" / fs::path(observation).stem() : fs::path(out_dir);
    };
    if (gen->parsed()) cmd_gen_models(cfg, log);
    else if (shape->parsed()) cmd_build_shape_space(cfg, log);
    else if (infer_shape->parsed()) cmd_infer_shape(cfg, observation, output_dir(), log);
    else if (synergies->parsed()) cmd_build_synergies(cfg, log);
    else if (train->parsed()) cmd_train_learner(cfg, log);
    else if (infer_grasp->parsed()) cmd_infer_grasp(cfg, observation, output_dir(), log);
    else if (eval->parsed()) cmd_eval(cfg, log);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
