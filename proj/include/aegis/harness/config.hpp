#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aegis/detector/detector.hpp"
#include "aegis/envsim/benchmarks.hpp"
#include "aegis/gpopt/gp.hpp"
#include "aegis/neuralctl/ddpg.hpp"
#include "aegis/specdsl/spec.hpp"

namespace aegis::harness {

struct VictimSettings {
  /// "auto" picks LQR for linear plants with weights in the benchmark file,
  /// DDPG otherwise.
  std::string kind = "auto";
  std::size_t count = 1;
  std::size_t steps = 20000;
  double tau = 5e-3;
  double termination_penalty = 100.0;
  /// Training starts are drawn from this fraction of the safety box; 0 uses
  /// the init box.
  double start_scale = 0.8;
  std::vector<std::size_t> hidden{64, 64};
};

struct EpsilonSettings {
  /// "init_box", "auto" or "fixed"
  std::string mode = "init_box";
  double value = 0.0;
  double start = 0.001;
  double step = 0.0005;
  std::size_t n_sims = 1000;
  double max = 0.5;
};

struct AttackSettings {
  std::size_t n_init = 10;
  std::size_t n_iter = 30;
  std::size_t candidates = 2048;
  double xi = 0.01;
  /// 0: the benchmark's default stride
  std::size_t stride = 0;
  std::size_t record_stride = 10;
};

struct FeatureSettings {
  double fraction = 0.2;
  std::size_t n_trees = 100;
  std::size_t max_depth = 50;
  std::size_t max_rows = 50000;
};

struct AuxSettings {
  std::size_t steps = 20000;
  double tau = 5e-3;
  double p_adv = 0.8;
  std::size_t episode_length = 100;
  double lambda = 1.0;
  double termination_penalty = 100.0;
  bool rollout_min_safety = false;
  /// "none" or "safety" (divide network inputs by the safety half-widths)
  std::string observation_scale = "none";
};

struct EvalSettings {
  std::size_t defense_starts = 1000;
  std::size_t perf_runs = 200;
  bool improvement = true;
  bool sweep = true;
};

struct ExperimentConfig {
  std::string benchmark = "pendulum";
  /// Optional benchmark file; overrides the bundled one.
  std::string benchmark_file;
  /// Optional spec file; defaults to the benchmark's spec.
  std::string spec_file;
  /// Pre-trained checkpoints; the first one is the attacked policy. Empty:
  /// victims are trained.
  std::vector<std::string> victims;
  std::uint64_t seed = 1;
  /// One base trajectory and one BO run per entry.
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "runs/default";
  std::size_t workers = 1;

  VictimSettings victim;
  EpsilonSettings epsilon;
  AttackSettings attack;
  FeatureSettings features;
  detector::DetectorConfig detector;
  AuxSettings aux;
  EvalSettings eval;

  /// Throws ConfigError on invalid values or missing files (naming the path).
  void validate() const;

  envsim::Benchmark load_benchmark() const;
  specdsl::SafetySpec load_spec(const envsim::Benchmark& bench) const;
  gpopt::AcquisitionConfig acquisition() const;
  neuralctl::TrainerConfig victim_trainer() const;
  neuralctl::TrainerConfig aux_trainer() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Unknown keys are rejected so that typos do not pass silently.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& file);

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when
/// possible and taken as a string otherwise.
ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace aegis::harness
