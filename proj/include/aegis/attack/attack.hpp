#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "aegis/core/policy.hpp"
#include "aegis/envsim/env_model.hpp"
#include "aegis/envsim/rollout.hpp"
#include "aegis/gpopt/gp.hpp"
#include "aegis/specdsl/spec.hpp"

namespace aegis::attack {

/// The set of states an attacker may substitute for s: filtered dimensions
/// move by at most half_widths[i] (epsilon unless set per dimension), the
/// others stay fixed. With a clip box the perturbed state must also stay
/// inside it.
struct PerturbationBox {
  double epsilon = 0.0;
  std::vector<std::size_t> filter;
  Vector half_widths;
  std::optional<Box> clip;

  static PerturbationBox uniform(double epsilon, std::vector<std::size_t> filter);
  static PerturbationBox all_dims(double epsilon, std::size_t state_dim);
  /// Offsets span the init interval recentered at the attacked state, clipped
  /// to the safety box shrunk inward by margin_fraction of its width.
  static PerturbationBox from_init_box(const Box& init_box, const Box& safety_box,
                                       std::vector<std::size_t> filter, double margin_fraction = 1e-3);

  void validate(std::size_t state_dim) const;
  /// Offsets admissible at s, one dimension per filter entry.
  Box offset_box(const State& s) const;
};

std::vector<std::size_t> all_dims(std::size_t state_dim);

/// The safety box shrunk inward by margin_fraction of its width per side.
Box clip_region(const Box& safety_box, double margin_fraction = 1e-3);

/// s with s[filter[i]] += offsets[i]. Throws ConfigError if an offset leaves
/// the box.
State perturb(const State& s, const PerturbationBox& box, const Vector& offsets);

struct AttackOptions {
  /// Attack every stride-th state of the base trajectory.
  std::size_t stride = 1;
  /// Rollout length from the perturbed state; 0 means the env horizon.
  std::size_t rollout_steps = 0;
  /// Safe rollouts keep every n-th state (0 keeps only the perturbed state);
  /// unsafe rollouts are always kept whole.
  std::size_t record_state_stride = 1;
  std::size_t workers = 1;
};

struct AttackRecord {
  std::size_t traj_id = 0;
  std::size_t step_index = 0;  // k: index of the attacked state in the base trajectory
  std::size_t ordinal = 0;     // evaluation number within this attack
  State source;
  State perturbed;
  /// Rollout from the perturbed state (possibly thinned, see AttackOptions).
  std::vector<State> states;
  /// Safety reward of the full rollout; NaN when the plant blew up.
  double safety_reward = 0.0;
  bool unsafe = false;
  bool numeric_failure = false;
};

struct AttackResult {
  std::vector<AttackRecord> records;
  std::size_t unsafe_count = 0;
  /// unsafe rollouts / all rollouts
  double success_rate = 0.0;

  std::vector<State> adversarial_set() const;
};

/// Indices 0, stride, 2*stride, ... below length.
std::vector<std::size_t> attacked_indices(std::size_t length, std::size_t stride);

/// One rollout from `start` that stops at the first state with non-positive
/// safety reward.
AttackRecord evaluate_start(const envsim::EnvModel& env, const BlackBoxPolicy& policy,
                            const specdsl::SafetySpec& spec, const State& start,
                            const AttackOptions& options);

/// n_samples rollouts from uniformly chosen attacked states with offsets
/// drawn uniformly from their perturbation boxes.
AttackResult random_attack(const envsim::EnvModel& env, const BlackBoxPolicy& policy,
                           const specdsl::SafetySpec& spec, const PerturbationBox& box,
                           const envsim::Trajectory& base, std::size_t n_samples, std::uint64_t seed,
                           const AttackOptions& options = {}, std::size_t traj_id = 0);

/// Per attacked state, bo_minimize over offsets with the rollout safety
/// reward as objective. Every evaluation becomes a record.
AttackResult bo_attack(const envsim::EnvModel& env, const BlackBoxPolicy& policy,
                       const specdsl::SafetySpec& spec, const PerturbationBox& box,
                       const envsim::Trajectory& base, const gpopt::AcquisitionConfig& acq,
                       std::uint64_t seed, const AttackOptions& options = {}, std::size_t traj_id = 0);

/// Merges per-trajectory results, recomputing the counts.
AttackResult merge(std::vector<AttackResult> parts);

struct EpsilonSearch {
  double start = 0.001;
  double step = 0.0005;
  std::size_t n_sims = 1000;
  double max_epsilon = 0.5;
  std::vector<std::size_t> filter;  // empty: all dimensions
  /// Perturbed states are kept inside this box, as in PerturbationBox.
  std::optional<Box> clip;
};

/// Smallest epsilon in start + i * step for which every policy has at least
/// one unsafe rollout among n_sims random perturbed starts. Throws
/// ConfigError ("no epsilon found") past max_epsilon.
double select_epsilon(const envsim::EnvModel& env, const std::vector<PolicyPtr>& policies,
                      const specdsl::SafetySpec& spec, const EpsilonSearch& search, std::uint64_t seed);

void write_records_jsonl(std::ostream& out, const std::vector<AttackRecord>& records);
std::vector<AttackRecord> read_records_jsonl(std::istream& in);

}  // namespace aegis::attack
