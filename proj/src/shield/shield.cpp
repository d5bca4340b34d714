#include "aegis/shield/shield.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "aegis/core/errors.hpp"
#include "aegis/core/parallel.hpp"

namespace aegis::shield {

int detector_reward(const detector::Detector& det, const State& s) { return det.classify(s) ? 0 : 1; }

ShieldTrainEnv::ShieldTrainEnv(envsim::EnvModel env, specdsl::SafetySpec spec, detector::Detector det,
                               std::vector<State> adversarial_set, ShieldTrainOptions options)
    : env_(std::move(env)), spec_(std::move(spec)), det_(std::move(det)),
      adversarial_(std::move(adversarial_set)), opts_(std::move(options)) {
  if (!(opts_.p_adv >= 0.0 && opts_.p_adv <= 1.0)) throw ConfigError("p_adv must lie in [0, 1]");
  if (opts_.episode_length == 0) throw ConfigError("aux episode length must be positive");
  if (!std::isfinite(opts_.lambda) || !std::isfinite(opts_.termination_penalty)) {
    throw ConfigError("aux reward weights must be finite");
  }
  if (det_.input_dim() != env_.state_dim()) throw DimensionError("detector does not match the plant");
  for (const auto& s : adversarial_) {
    if (static_cast<std::size_t>(s.size()) != env_.state_dim()) throw DimensionError("adversarial state dimension");
  }
  if (opts_.fallback_box) opts_.fallback_box->validate(env_.state_dim());
  if (opts_.observation_scale.size() != 0 &&
      static_cast<std::size_t>(opts_.observation_scale.size()) != env_.state_dim()) {
    throw DimensionError("observation scale dimension");
  }
}

State ShieldTrainEnv::reset(Rng& rng) {
  State s;
  const double coin = uniform(rng, 0.0, 1.0);
  if (!adversarial_.empty() && coin < opts_.p_adv) {
    s = adversarial_[uniform_index(rng, adversarial_.size())];
  } else {
    s = envsim::sample_initial(env_, rng);
    if (adversarial_.empty() && opts_.fallback_box) {
      s = attack::perturb(s, *opts_.fallback_box, opts_.fallback_box->offset_box(s).sample(rng));
    }
  }
  running_min_ = spec_.reward(s);
  return s;
}

neuralctl::EpisodicTask::Transition ShieldTrainEnv::step(const State& s, const Action& u) {
  Transition tr;
  tr.next = env_.step(s, u);
  if (!all_finite(tr.next)) {
    // keep the replay buffer finite; the episode ends as a violation
    tr.next = s;
    tr.reward = -opts_.termination_penalty;
    tr.terminal = true;
    return tr;
  }
  const double l = spec_.reward(tr.next);
  running_min_ = std::min(running_min_, l);
  const double safety = opts_.rollout_min_safety ? running_min_ : l;
  tr.reward = detector_reward(det_, tr.next) + opts_.lambda * safety;
  if (l <= 0.0) {
    tr.terminal = true;
    tr.reward -= opts_.termination_penalty;
  }
  return tr;
}

Vector ShieldTrainEnv::observation_scale() const {
  return opts_.observation_scale.size() ? opts_.observation_scale
                                        : Vector::Ones(static_cast<Eigen::Index>(env_.state_dim()));
}

neuralctl::TrainResult train_aux(ShieldTrainEnv& shield_env, const neuralctl::TrainerConfig& cfg,
                                 std::uint64_t seed) {
  if (shield_env.using_fallback()) {
    std::cerr << "warning: empty adversarial set; aux episodes start from perturbed nominal states\n";
  }
  return neuralctl::train_ddpg(shield_env, cfg, seed, "aux");
}

ShieldedPolicy::ShieldedPolicy(detector::Detector det, PolicyPtr original, PolicyPtr aux, std::string name)
    : det_(std::move(det)), original_(std::move(original)), aux_(std::move(aux)), name_(std::move(name)) {
  if (!original_ || !aux_) throw ConfigError("shielded policy needs both sub-policies");
  if (original_->action_dim() != aux_->action_dim()) throw DimensionError("sub-policies differ in action dimension");
}

Action ShieldedPolicy::act(const State& s) const {
  bool intervened = false;
  return act(s, intervened);
}

Action ShieldedPolicy::act(const State& s, bool& intervened) const {
  intervened = det_.classify(s);
  if (intervened) {
    interventions_.fetch_add(1, std::memory_order_relaxed);
    return aux_->act(s);
  }
  return original_->act(s);
}

ShieldedPolicy ShieldedPolicy::with_c(double c) const { return ShieldedPolicy(det_.with_c(c), original_, aux_, name_); }

TracedRollout traced_rollout(const envsim::EnvModel& env, const ShieldedPolicy& sp, const State& start,
                             const specdsl::SafetySpec* stop_spec, std::size_t max_steps) {
  if (static_cast<std::size_t>(start.size()) != env.state_dim()) throw DimensionError("start state dimension");
  const std::size_t steps = max_steps == 0 ? env.horizon() : max_steps;
  TracedRollout out;
  auto& traj = out.trajectory;
  traj.states.push_back(start);
  const auto stop = [&](const State& s) { return stop_spec && stop_spec->reward(s) <= 0.0; };
  if (stop(start)) {
    traj.stopped_early = true;
    return out;
  }
  for (std::size_t t = 0; t < steps; ++t) {
    const State& s = traj.states.back();
    bool intervened = false;
    Action u = sp.act(s, intervened);
    State next = env.step(s, u);
    if (!all_finite(next)) throw NumericOverflowError(t + 1, "shielded rollout: non-finite state");
    traj.perf_return += env.reward(s, u);
    out.decisions.push_back(intervened);
    traj.actions.push_back(std::move(u));
    traj.states.push_back(std::move(next));
    if (stop(traj.states.back())) {
      traj.stopped_early = true;
      break;
    }
  }
  return out;
}

DefenseResult eval_defense(const envsim::EnvModel& env, const specdsl::SafetySpec& spec, const BlackBoxPolicy& policy,
                           const std::vector<State>& starts, const EvalOptions& options) {
  if (starts.empty()) throw ConfigError("defense evaluation needs at least one start state");
  const auto* sp = dynamic_cast<const ShieldedPolicy*>(&policy);
  const std::size_t before = sp ? sp->interventions() : 0;
  std::vector<char> safe(starts.size());
  std::vector<std::size_t> steps(starts.size());
  envsim::RolloutOptions ro;
  ro.max_steps = options.rollout_steps;
  ro.stop = [&spec](const State& s) { return spec.reward(s) <= 0.0; };
  parallel_for(
      starts.size(),
      [&](std::size_t i) {
        try {
          const auto traj = envsim::rollout(env, policy, starts[i], ro);
          safe[i] = spec.reward(traj) > 0.0;
          steps[i] = traj.actions.size();
        } catch (const NumericOverflowError& e) {
          safe[i] = 0;
          steps[i] = e.step();
        }
      },
      options.workers);
  DefenseResult r;
  r.starts = starts.size();
  for (std::size_t i = 0; i < starts.size(); ++i) {
    r.safe += static_cast<std::size_t>(safe[i]);
    r.steps += steps[i];
  }
  r.rate = static_cast<double>(r.safe) / static_cast<double>(r.starts);
  r.interventions = sp ? sp->interventions() - before : 0;
  return r;
}

ImprovementResult eval_shielded_attack_improvement(const envsim::EnvModel& env, const specdsl::SafetySpec& spec,
                                                   const ShieldedPolicy& sp, const attack::PerturbationBox& box,
                                                   const std::vector<envsim::Trajectory>& bases,
                                                   const gpopt::AcquisitionConfig& acq,
                                                   const std::vector<std::uint64_t>& seeds,
                                                   const attack::AttackOptions& options) {
  if (bases.empty() || bases.size() != seeds.size()) throw ConfigError("need one seed per base trajectory");
  ImprovementResult r;
  double sum = 0.0;
  std::size_t defined = 0;
  attack::AttackOptions opts = options;
  opts.record_state_stride = 0;
  for (std::size_t i = 0; i < bases.size(); ++i) {
    const auto base = attack::bo_attack(env, *sp.original(), spec, box, bases[i], acq, seeds[i], opts, i);
    const auto shielded = attack::bo_attack(env, sp, spec, box, bases[i], acq, seeds[i], opts, i);
    r.baseline_unsafe.push_back(base.unsafe_count);
    r.shielded_unsafe.push_back(shielded.unsafe_count);
    r.rollouts_per_attack = base.records.size();
    if (base.unsafe_count > 0) {
      sum += 1.0 - static_cast<double>(shielded.unsafe_count) / static_cast<double>(base.unsafe_count);
      ++defined;
    }
  }
  if (defined > 0) r.improvement = sum / static_cast<double>(defined);
  return r;
}

std::vector<State> perturbed_nominal_starts(const std::vector<envsim::Trajectory>& bases,
                                            const attack::PerturbationBox& box, std::size_t n, std::uint64_t seed) {
  if (bases.empty()) throw ConfigError("no base trajectories for nominal starts");
  Rng rng(seed);
  std::vector<State> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = bases[uniform_index(rng, bases.size())];
    if (b.states.empty()) throw ConfigError("empty base trajectory");
    const State& s = b.states[uniform_index(rng, b.states.size())];
    out.push_back(attack::perturb(s, box, box.offset_box(s).sample(rng)));
  }
  return out;
}

double mean_return(const envsim::EnvModel& env, const BlackBoxPolicy& policy, const std::vector<State>& starts,
                   const EvalOptions& options) {
  if (starts.empty()) throw ConfigError("mean return of an empty start set");
  std::vector<double> returns(starts.size());
  envsim::RolloutOptions ro;
  ro.max_steps = options.rollout_steps;
  parallel_for(
      starts.size(), [&](std::size_t i) { returns[i] = envsim::rollout(env, policy, starts[i], ro).perf_return; },
      options.workers);
  double sum = 0.0;
  for (double r : returns) sum += r;
  return sum / static_cast<double>(starts.size());
}

std::vector<SweepRow> intervention_sweep(const envsim::EnvModel& env, const specdsl::SafetySpec& spec,
                                         const ShieldedPolicy& sp, const detector::CRange& range,
                                         const std::vector<State>& adversarial_set,
                                         const std::vector<envsim::Trajectory>& bases,
                                         const attack::PerturbationBox& box, const SweepOptions& options) {
  if (adversarial_set.empty()) throw ConfigError("intervention sweep needs a non-empty adversarial set");
  if (options.perf_runs == 0) throw ConfigError("intervention sweep needs at least one performance run");
  const auto starts = perturbed_nominal_starts(bases, box, options.perf_runs, options.seed);

  // Fixed reference set: margins are computed once, so counts at different C
  // are comparisons against the same numbers.
  std::vector<double> margins;
  for (const auto& s : adversarial_set) margins.push_back(sp.detector().margin(s));
  envsim::RolloutOptions ro;
  ro.max_steps = options.eval.rollout_steps;
  for (const auto& s0 : starts) {
    for (const auto& s : envsim::rollout(env, *sp.original(), s0, ro).states) margins.push_back(sp.detector().margin(s));
  }

  std::vector<SweepRow> rows;
  for (double c : range.samples) {
    SweepRow row;
    row.c = c;
    for (double m : margins) row.intervention_count += (m > c) ? 0 : 1;
    row.intervention_fraction = static_cast<double>(row.intervention_count) / static_cast<double>(margins.size());
    auto shielded = sp.with_c(c);
    row.defense_rate = eval_defense(env, spec, shielded, adversarial_set, options.eval).rate;
    shielded.reset_interventions();
    row.mean_perf_return = mean_return(env, shielded, starts, options.eval);
    row.rollout_interventions = shielded.interventions();
    const std::size_t horizon = options.eval.rollout_steps ? options.eval.rollout_steps : env.horizon();
    row.rollout_intervention_fraction =
        static_cast<double>(row.rollout_interventions) / static_cast<double>(horizon * starts.size());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace aegis::shield
