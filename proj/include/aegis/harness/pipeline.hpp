#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aegis/core/errors.hpp"
#include "aegis/harness/config.hpp"
#include "aegis/harness/report.hpp"

namespace aegis::harness {

/// A stage failed; artifacts of earlier stages stay on disk.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// File layout of a run directory.
struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path file(const std::string& name) const { return dir / name; }
  std::filesystem::path victim(std::size_t k) const { return dir / "victims" / ("victim_" + std::to_string(k) + ".json"); }
  std::filesystem::path records(int stage) const { return dir / ("stage" + std::to_string(stage) + "_records.jsonl"); }
};

/// Stage names in execution order.
const std::vector<std::string>& stage_names();

/// The attack/defense pipeline over one run directory. Every stage reads its
/// inputs from files written by earlier stages, so stages can also be run
/// one at a time (the CLI does this). Randomness comes from cfg.seed, split
/// per stage by name.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const RunPaths& paths() const { return paths_; }
  const envsim::Benchmark& benchmark() const { return bench_; }
  const specdsl::SafetySpec& spec() const { return spec_; }

  /// Runs one stage by name, wrapping failures in StageError.
  void run(const std::string& stage);
  /// Every stage in order; skips victim training when checkpoints are given,
  /// and stages the config turns off.
  void run_all();

  // stages
  void train_victims();
  void attack(int stage);
  void select_features();
  void train_detector();
  void train_aux();
  void evaluate_defense();
  void evaluate_improvement();
  void sweep();
  void perf();
  void transfer();
  void report();

  // artifacts, loaded from the run directory on first use
  const std::vector<PolicyPtr>& victims();
  const std::vector<envsim::Trajectory>& bases();
  attack::PerturbationBox box(int stage);
  const std::vector<attack::AttackRecord>& records(int stage);
  std::vector<State> adversarial_set();
  const detector::Detector& detector();
  const PolicyPtr& aux();
  std::shared_ptr<shield::ShieldedPolicy> shielded();

  std::uint64_t stage_seed(const std::string& stage) const;

 private:
  std::vector<std::size_t> filter(int stage);
  double epsilon_value();
  attack::AttackOptions attack_options(std::size_t record_stride) const;
  std::vector<State> sample_states(const std::vector<State>& pool, std::size_t n, std::uint64_t seed) const;
  Manifest manifest(const std::string& stage) const;
  void finish(const Manifest& m);
  void write_text(const std::filesystem::path& file, const std::string& text) const;

  ExperimentConfig cfg_;
  RunPaths paths_;
  envsim::Benchmark bench_;
  specdsl::SafetySpec spec_;

  std::optional<std::vector<PolicyPtr>> victims_;
  std::optional<std::vector<envsim::Trajectory>> bases_;
  std::optional<double> epsilon_;
  std::optional<std::vector<std::size_t>> selected_;
  std::optional<std::vector<attack::AttackRecord>> records_[2];
  std::optional<detector::Detector> detector_;
  std::optional<PolicyPtr> aux_;
};

/// Checks that every stage manifest's files still hash to the recorded values.
/// Returns the mismatching paths.
std::vector<std::string> verify_manifests(const std::filesystem::path& run_dir);

}  // namespace aegis::harness
