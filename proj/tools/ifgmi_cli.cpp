#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "ifgmi/harness/pipeline.hpp"

using namespace ifgmi;
using harness::json;

namespace {

struct Common {
  std::string config;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON); defaults when omitted");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--threads", c.threads, "attack worker threads (overrides the config)")->check(CLI::PositiveNumber);
}

harness::Experiment make(const Common& c) {
  auto cfg = c.config.empty() ? harness::ExperimentConfig{} : harness::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  return harness::Experiment(cfg, c.out);
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const harness::ConfigError*>(&e)) return "config";
  if (dynamic_cast<const harness::MissingArtifact*>(&e)) return "missing_artifact";
  if (dynamic_cast<const models::ArchitectureMismatch*>(&e)) return "architecture_mismatch";
  if (dynamic_cast<const models::TrainingDiverged*>(&e)) return "training_diverged";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intermediate-feature generative model inversion laboratory"};
  app.require_subcommand(1);
  Common common;
  std::string which = "all", axis = "L";

  auto* gen = app.add_subcommand("gen-data", "render private and public corpora");
  auto* train = app.add_subcommand("train", "train the prior or a classifier");
  train->add_option("which", which, "prior | target | eval | indep | all")->capture_default_str();
  auto* atk = app.add_subcommand("attack", "run every configured method");
  auto* eval = app.add_subcommand("evaluate", "score attack outputs, write CSV/JSON report");
  auto* abl = app.add_subcommand("ablate", "accuracy sweep along one axis");
  abl->add_option("--axis", axis, "L | radii | decomposition")->capture_default_str();
  auto* run = app.add_subcommand("run", "gen-data, train all, attack, evaluate");
  auto* show = app.add_subcommand("config", "print the effective configuration");
  for (auto* c : {gen, train, atk, eval, abl, run, show}) add_common(c, common);

  CLI11_PARSE(app, argc, argv);

  std::string command = app.get_subcommands().front()->get_name();
  try {
    auto exp = make(common);
    json out;
    if (command == "gen-data") out = exp.gen_data();
    else if (command == "train") out = exp.train(which);
    else if (command == "attack") out = exp.attack();
    else if (command == "evaluate") out = exp.evaluate()["summary"];
    else if (command == "ablate") out = exp.ablate(axis)["rows"];
    else if (command == "run") out = exp.pipeline()["timings"];
    else out = harness::to_json(exp.config());
    std::cout << out.dump(2) << std::endl;
    return 0;
  } catch (const std::exception& e) {
    json err{{"error", {{"command", command}, {"kind", error_kind(e)}, {"message", e.what()}}}};
    std::cerr << err.dump() << std::endl;
    std::error_code ec;
    if (std::filesystem::is_directory(common.out, ec)) {
      std::ofstream os(std::filesystem::path(common.out) / "error.json");
      if (os) os << err.dump(2) << '\n';
    }
    return error_kind(e) == "config" ? 2 : 1;
  }
}
