#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aegis/attack/attack.hpp"
#include "aegis/detector/detector.hpp"
#include "aegis/neuralctl/ddpg.hpp"

namespace aegis::shield {

/// 1 iff the detector calls s safe.
int detector_reward(const detector::Detector& det, const State& s);

struct ShieldTrainOptions {
  /// Probability that an episode starts from an adversarial-set state.
  double p_adv = 0.8;
  /// Recovery horizon; episodes are truncated here.
  std::size_t episode_length = 100;
  /// Weight of the safety term in detector_reward + lambda * L.
  double lambda = 1.0;
  /// Use the running minimum of L over the episode instead of L(next).
  bool rollout_min_safety = false;
  /// Episodes end on a spec violation with this one-off penalty.
  double termination_penalty = 100.0;
  /// Per-dimension divisor for the networks' inputs; empty: ones.
  Vector observation_scale;
  /// Used when the adversarial set is empty: starts are init samples moved
  /// by a random offset from this box.
  std::optional<attack::PerturbationBox> fallback_box;
};

/// The plant with reward detector_reward(next) + lambda * L(phi)(next) and
/// starts drawn from the adversarial set or the init box.
class ShieldTrainEnv : public neuralctl::EpisodicTask {
 public:
  ShieldTrainEnv(envsim::EnvModel env, specdsl::SafetySpec spec, detector::Detector det,
                 std::vector<State> adversarial_set, ShieldTrainOptions options);

  std::size_t state_dim() const override { return env_.state_dim(); }
  const Box& action_box() const override { return env_.action_box(); }
  std::size_t episode_length() const override { return opts_.episode_length; }
  State reset(Rng& rng) override;
  Transition step(const State& s, const Action& u) override;
  Vector observation_scale() const override;

  bool using_fallback() const { return adversarial_.empty(); }

 private:
  envsim::EnvModel env_;
  specdsl::SafetySpec spec_;
  detector::Detector det_;
  std::vector<State> adversarial_;
  ShieldTrainOptions opts_;
  double running_min_ = 0.0;
};

/// DDPG on the shield environment. Logs a warning to stderr when it falls
/// back to perturbed nominal starts.
neuralctl::TrainResult train_aux(ShieldTrainEnv& shield_env, const neuralctl::TrainerConfig& cfg,
                                 std::uint64_t seed);

/// Per-step dispatch: pi_aux when the detector flags the state, pi_o
/// otherwise. The intervention counter is atomic so one instance may serve
/// several rollout workers.
class ShieldedPolicy : public BlackBoxPolicy {
 public:
  ShieldedPolicy(detector::Detector det, PolicyPtr original, PolicyPtr aux, std::string name = "shielded");

  Action act(const State& s) const override;
  /// Same as act() and reports which branch ran.
  Action act(const State& s, bool& intervened) const;
  std::size_t action_dim() const override { return original_->action_dim(); }
  std::string name() const override { return name_; }

  const detector::Detector& detector() const { return det_; }
  const PolicyPtr& original() const { return original_; }
  const PolicyPtr& aux() const { return aux_; }
  ShieldedPolicy with_c(double c) const;

  std::size_t interventions() const { return interventions_.load(); }
  void reset_interventions() { interventions_.store(0); }

 private:
  detector::Detector det_;
  PolicyPtr original_;
  PolicyPtr aux_;
  std::string name_;
  mutable std::atomic<std::size_t> interventions_{0};
};

struct TracedRollout {
  envsim::Trajectory trajectory;
  /// decisions[t] is true when pi_aux produced actions[t].
  std::vector<bool> decisions;
};

/// Rollout under the shield that logs every dispatch decision. Stops at the
/// first unsafe state when a spec is given.
TracedRollout traced_rollout(const envsim::EnvModel& env, const ShieldedPolicy& sp, const State& start,
                             const specdsl::SafetySpec* stop_spec = nullptr, std::size_t max_steps = 0);

struct EvalOptions {
  /// Rollout length from each start; 0 means the env horizon.
  std::size_t rollout_steps = 0;
  std::size_t workers = 1;
};

struct DefenseResult {
  double rate = 0.0;  // safe rollouts / starts
  std::size_t starts = 0;
  std::size_t safe = 0;
  std::size_t interventions = 0;
  std::size_t steps = 0;
};

/// Fraction of rollouts from the given starts that stay safe end to end.
/// Throws ConfigError for an empty start set.
DefenseResult eval_defense(const envsim::EnvModel& env, const specdsl::SafetySpec& spec, const BlackBoxPolicy& policy,
                           const std::vector<State>& starts, const EvalOptions& options = {});

struct ImprovementResult {
  /// Mean over the seeds with a non-zero baseline; nullopt when none has one.
  std::optional<double> improvement;
  std::vector<std::size_t> baseline_unsafe;
  std::vector<std::size_t> shielded_unsafe;
  std::size_t rollouts_per_attack = 0;
};

/// BO-attacks pi_o and the shielded policy with identical bases, boxes,
/// budgets and seeds; improvement = 1 - unsafe(shielded) / unsafe(pi_o).
/// bases[i] is attacked with seeds[i].
ImprovementResult eval_shielded_attack_improvement(const envsim::EnvModel& env, const specdsl::SafetySpec& spec,
                                                   const ShieldedPolicy& sp, const attack::PerturbationBox& box,
                                                   const std::vector<envsim::Trajectory>& bases,
                                                   const gpopt::AcquisitionConfig& acq,
                                                   const std::vector<std::uint64_t>& seeds,
                                                   const attack::AttackOptions& options = {});

struct SweepRow {
  double c = 0.0;
  double defense_rate = 0.0;
  double mean_perf_return = 0.0;
  /// Flagged states in the fixed reference set (monotone in C).
  std::size_t intervention_count = 0;
  double intervention_fraction = 0.0;
  /// Interventions during the shielded rollouts themselves.
  std::size_t rollout_interventions = 0;
  double rollout_intervention_fraction = 0.0;
};

struct SweepOptions {
  std::size_t perf_runs = 200;
  std::uint64_t seed = 0;
  EvalOptions eval;
};

/// Starts in the box around uniformly chosen base-trajectory states.
std::vector<State> perturbed_nominal_starts(const std::vector<envsim::Trajectory>& bases,
                                            const attack::PerturbationBox& box, std::size_t n, std::uint64_t seed);

/// Mean undiscounted plant return over rollouts from the given starts.
double mean_return(const envsim::EnvModel& env, const BlackBoxPolicy& policy, const std::vector<State>& starts,
                   const EvalOptions& options = {});

/// One row per C sample: defense rate from the adversarial set, mean return
/// from perturbed nominal starts, and intervention counts. The reference set
/// for intervention_count is the adversarial set plus every state the
/// unshielded policy visits from the nominal starts.
std::vector<SweepRow> intervention_sweep(const envsim::EnvModel& env, const specdsl::SafetySpec& spec,
                                         const ShieldedPolicy& sp, const detector::CRange& range,
                                         const std::vector<State>& adversarial_set,
                                         const std::vector<envsim::Trajectory>& bases,
                                         const attack::PerturbationBox& box, const SweepOptions& options = {});

}  // namespace aegis::shield
