// aegisctl: command-line front end for the attack/defense pipeline.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aegis/harness/pipeline.hpp"

using namespace aegis;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::string> out;
  std::optional<std::string> benchmark;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app->add_option("-s,--set", c.overrides, "override a config key, e.g. attack.n_iter=5");
  app->add_option("-o,--out", c.out, "run directory (config key output_dir)");
  app->add_option("-b,--benchmark", c.benchmark, "benchmark name");
  app->add_option("--seed", c.seed, "root seed");
  app->add_option("-j,--workers", c.workers, "rollout worker threads (0: all cores)");
}

harness::ExperimentConfig make_config(const Common& c) {
  auto cfg = c.config.empty() ? harness::ExperimentConfig{} : harness::load_config(c.config);
  if (c.benchmark) cfg.benchmark = *c.benchmark;
  if (c.out) cfg.output_dir = *c.out;
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  return harness::apply_overrides(cfg, c.overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Falsify control policies with Bayesian-optimized state perturbations and train shields against them"};
  app.require_subcommand(1);
  Common common;

  // Each subcommand maps to pipeline stages; extra flags adjust the config.
  struct Command {
    CLI::App* app;
    std::vector<std::string> stages;
  };
  std::vector<Command> commands;
  auto add = [&](const std::string& name, const std::string& help, std::vector<std::string> stages,
                 CLI::App* parent = nullptr) {
    auto* sub = (parent ? parent : &app)->add_subcommand(name, help);
    add_common(sub, common);
    commands.push_back({sub, std::move(stages)});
    return sub;
  };

  add("train-victim", "train (or build LQR) victim policies", {"victim"});
  int attack_stage = 1;
  add("attack", "BO and random attacks on the victim; stage 2 uses the selected features", {})
      ->add_option("--stage", attack_stage, "1: all dimensions, 2: selected features")
      ->check(CLI::IsMember({1, 2}));
  add("select-features", "random-forest feature ranking on stage-1 attack data", {"features"});
  std::optional<std::string> kind;
  add("train-detector", "train the safe/unsafe state classifier", {"detector"})
      ->add_option("--kind", kind, "forest or dense");
  add("train-aux", "train the auxiliary recovery policy", {"aux"});
  bool no_improvement = false;
  add("defend-eval", "defense success rates and attack improvement under the shield", {"defense", "improvement"})
      ->add_flag("--no-improvement", no_improvement, "skip the shielded BO attack");
  auto* defend = app.add_subcommand("defend", "shield training and evaluation");
  defend->require_subcommand(1);
  add("train-aux", "train the auxiliary recovery policy", {"aux"}, defend);
  add("eval", "defense success rates and attack improvement under the shield", {"defense", "improvement"}, defend)
      ->add_flag("--no-improvement", no_improvement, "skip the shielded BO attack");
  std::vector<std::string> transfer_victims;
  add("transfer", "transferability matrix between victims", {"transfer"})
      ->add_option("--victims", transfer_victims, "victim checkpoints (default: the run's victims)");
  add("sweep-c", "defense and performance over 10 values of the detector constant C", {"sweep"});
  add("perf", "return of the original vs the shielded policy", {"perf"});
  add("pipeline", "run every stage", {"*"});
  add("report", "summary table from finished stages", {"report"});
  auto* verify = app.add_subcommand("verify", "check a run directory against its manifests");
  std::string verify_dir;
  verify->add_option("dir", verify_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) {
      const auto bad = harness::verify_manifests(verify_dir);
      for (const auto& b : bad) std::cout << "mismatch: " << b << '\n';
      std::cout << (bad.empty() ? "ok\n" : "");
      return bad.empty() ? 0 : 1;
    }
    const Command* cmd = nullptr;
    for (const auto& c : commands) {
      if (c.app->parsed()) cmd = &c;
    }
    if (!cmd) return 2;
    auto cfg = make_config(common);
    if (kind) cfg.detector.kind = detector::parse_kind(*kind);
    if (!transfer_victims.empty()) cfg.victims = transfer_victims;
    harness::Pipeline pipeline(cfg);
    std::vector<std::string> stages = cmd->stages;
    if (cmd->app->get_name() == "attack") stages = {"attack" + std::to_string(attack_stage)};
    if (no_improvement) std::erase(stages, "improvement");
    if (stages == std::vector<std::string>{"*"}) {
      pipeline.run_all();
    } else {
      for (const auto& s : stages) pipeline.run(s);
    }
    std::cout << "artifacts in " << pipeline.paths().dir.string() << '\n';
  } catch (const harness::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
