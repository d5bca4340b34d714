#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>

#include <nlohmann/json.hpp>

#include "aegis/core/errors.hpp"
#include "aegis/envsim/benchmarks.hpp"
#include "aegis/shield/shield.hpp"
#include "test_helpers.hpp"

using namespace aegis;
using namespace aegis::shield;

namespace {

std::shared_ptr<test::FunctionPolicy> pd(double kp, double kd) {
  return std::make_shared<test::FunctionPolicy>(1, [kp, kd](const State& s) {
    return Action{{-kp * s[0] - kd * s[1]}};
  }, "pd");
}

detector::Detector constant_detector(double p_unsafe) {
  nlohmann::json j = {{"dim", 2},
                      {"importances", {0.5, 0.5}},
                      {"trees", {{{"feature", {-1}}, {"threshold", {0.0}}, {"left", {-1}}, {"right", {-1}},
                                  {"p_unsafe", {p_unsafe}}}}}};
  return detector::Detector(forest::RandomForest::from_json(j));
}

// Flags |theta| > 0.2.
detector::Detector angle_detector() {
  nlohmann::json j = {{"dim", 2},
                      {"importances", {1.0, 0.0}},
                      {"trees", {{{"feature", {0, -1, 0, -1, -1}},
                                  {"threshold", {-0.2, 0.0, 0.2, 0.0, 0.0}},
                                  {"left", {1, -1, 3, -1, -1}},
                                  {"right", {2, -1, 4, -1, -1}},
                                  {"p_unsafe", {0.0, 1.0, 0.0, 0.0, 1.0}}}}}};
  return detector::Detector(forest::RandomForest::from_json(j));
}

struct Fixture : ::testing::Test {
  envsim::Benchmark bench = envsim::make_benchmark("pendulum");
  specdsl::SafetySpec spec = specdsl::parse_spec(bench.spec_text);
  // attackable victim and a stiffer recovery controller
  PolicyPtr orig = pd(20.0, 2.0);
  PolicyPtr aux = pd(40.0, 12.0);
  attack::PerturbationBox box =
      attack::PerturbationBox::from_init_box(bench.env.init_box(), bench.safety_box, attack::all_dims(2));

  std::vector<State> random_states(std::size_t n, std::uint64_t seed, double r = 0.6) const {
    Rng rng(seed);
    std::vector<State> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(Vector{{uniform(rng, -r, r), uniform(rng, -r, r)}});
    return out;
  }
  envsim::Trajectory base(double theta0) const { return envsim::rollout(bench.env, *orig, State{{theta0, 0.0}}); }
  static gpopt::AcquisitionConfig small_acq() {
    gpopt::AcquisitionConfig acq;
    acq.n_init = 3;
    acq.n_iter = 3;
    acq.candidates_per_step = 256;
    return acq;
  }
  static attack::AttackOptions strided() {
    attack::AttackOptions o;
    o.stride = 20;
    o.record_state_stride = 0;
    return o;
  }
};

using ShieldTest = Fixture;

}  // namespace

TEST_F(ShieldTest, DetectorRewardIsComplementOfClassify) {
  const auto det = angle_detector();
  for (const auto& s : random_states(500, 1)) EXPECT_EQ(detector_reward(det, s), det.classify(s) ? 0 : 1);
  EXPECT_EQ(detector_reward(det, State{{0.0, 0.0}}), 1);
  EXPECT_EQ(detector_reward(det, State{{0.3, 0.0}}), 0);
}

TEST_F(ShieldTest, NeverFiringDetectorPassesThrough) {
  ShieldedPolicy sp(constant_detector(0.0), orig, aux);
  for (const auto& s : random_states(200, 2)) EXPECT_EQ(sp.act(s), orig->act(s));
  EXPECT_EQ(sp.interventions(), 0u);
}

TEST_F(ShieldTest, AlwaysFiringDetectorIsAux) {
  ShieldedPolicy sp(constant_detector(1.0), orig, aux);
  const auto states = random_states(200, 3);
  for (const auto& s : states) EXPECT_EQ(sp.act(s), aux->act(s));
  EXPECT_EQ(sp.interventions(), states.size());
  sp.reset_interventions();
  EXPECT_EQ(sp.interventions(), 0u);
}

TEST_F(ShieldTest, RejectsMismatchedSubPolicies) {
  EXPECT_THROW(ShieldedPolicy(constant_detector(0.0), orig, nullptr), ConfigError);
  auto wide = std::make_shared<test::FunctionPolicy>(test::zero_policy(2));
  EXPECT_THROW(ShieldedPolicy(constant_detector(0.0), orig, wide), DimensionError);
}

// Replay oracle: every step of a traced rollout is recomputed from the logged
// state and decision, bit-exact.
TEST_F(ShieldTest, TracedRolloutReplaysExactly) {
  ShieldedPolicy sp(angle_detector(), orig, aux);
  const auto& det = sp.detector();
  for (const auto& s0 : random_states(20, 4, 0.45)) {
    sp.reset_interventions();
    const auto tr = traced_rollout(bench.env, sp, s0);
    const auto& traj = tr.trajectory;
    ASSERT_EQ(tr.decisions.size(), traj.actions.size());
    ASSERT_EQ(traj.states.size(), traj.actions.size() + 1);
    std::size_t flagged = 0;
    double ret = 0.0;
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      const State& s = traj.states[t];
      EXPECT_EQ(tr.decisions[t], det.classify(s));
      const Action u = tr.decisions[t] ? aux->act(s) : orig->act(s);
      EXPECT_EQ(traj.actions[t], u);
      EXPECT_EQ(traj.states[t + 1], bench.env.step(s, u));
      ret += bench.env.reward(s, u);
      flagged += tr.decisions[t] ? 1 : 0;
    }
    EXPECT_EQ(sp.interventions(), flagged);
    EXPECT_EQ(traj.perf_return, ret);
  }
}

TEST_F(ShieldTest, TracedRolloutStopsAtViolation) {
  ShieldedPolicy sp(constant_detector(0.0), orig, aux);
  const auto tr = traced_rollout(bench.env, sp, State{{0.49, 3.0}}, &spec);
  EXPECT_TRUE(tr.trajectory.stopped_early);
  EXPECT_LE(spec.reward(tr.trajectory.states.back()), 0.0);
  EXPECT_EQ(tr.decisions.size(), tr.trajectory.actions.size());
}

TEST_F(ShieldTest, NeverFiringDefenseMatchesUnshielded) {
  const auto starts = random_states(300, 5, 0.49);
  ShieldedPolicy sp(constant_detector(0.0), orig, aux);
  const auto a = eval_defense(bench.env, spec, *orig, starts);
  const auto b = eval_defense(bench.env, spec, sp, starts);
  EXPECT_EQ(a.rate, b.rate);
  EXPECT_EQ(a.safe, b.safe);
  EXPECT_EQ(b.interventions, 0u);
  EXPECT_GT(a.rate, 0.0);
  EXPECT_LT(a.rate, 1.0);
  EXPECT_THROW(eval_defense(bench.env, spec, sp, {}), ConfigError);
}

TEST_F(ShieldTest, DefenseCountsInterventionsAcrossWorkers) {
  const auto starts = random_states(100, 6, 0.45);
  ShieldedPolicy sp(angle_detector(), orig, aux);
  EvalOptions one, many;
  many.workers = 4;
  const auto a = eval_defense(bench.env, spec, sp, starts, one);
  const auto b = eval_defense(bench.env, spec, sp, starts, many);
  EXPECT_EQ(a.rate, b.rate);
  EXPECT_EQ(a.interventions, b.interventions);
  EXPECT_GT(a.interventions, 0u);
}

TEST_F(ShieldTest, ImprovementIsZeroForTheOriginalPolicy) {
  ShieldedPolicy sp(constant_detector(0.0), orig, aux);
  const auto r = eval_shielded_attack_improvement(bench.env, spec, sp, box, {base(0.1), base(-0.2)}, small_acq(),
                                                  {1, 2}, strided());
  ASSERT_TRUE(r.improvement.has_value());
  EXPECT_EQ(*r.improvement, 0.0);
  EXPECT_EQ(r.baseline_unsafe, r.shielded_unsafe);
  EXPECT_GT(r.baseline_unsafe[0], 0u);
}

TEST_F(ShieldTest, ImprovementAveragesPerSeedReductions) {
  ShieldedPolicy sp(constant_detector(1.0), orig, aux);
  const std::vector<envsim::Trajectory> bases{base(0.1), base(-0.2)};
  const std::vector<std::uint64_t> seeds{4, 5};
  const auto r = eval_shielded_attack_improvement(bench.env, spec, sp, box, bases, small_acq(), seeds, strided());
  double sum = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto a = attack::bo_attack(bench.env, *orig, spec, box, bases[i], small_acq(), seeds[i], strided(), i);
    const auto b = attack::bo_attack(bench.env, *aux, spec, box, bases[i], small_acq(), seeds[i], strided(), i);
    ASSERT_GT(a.unsafe_count, 0u);
    EXPECT_EQ(r.baseline_unsafe[i], a.unsafe_count);
    EXPECT_EQ(r.shielded_unsafe[i], b.unsafe_count);
    sum += 1.0 - static_cast<double>(b.unsafe_count) / static_cast<double>(a.unsafe_count);
  }
  ASSERT_TRUE(r.improvement.has_value());
  EXPECT_DOUBLE_EQ(*r.improvement, sum / 2.0);
  EXPECT_EQ(r.rollouts_per_attack, 66u);
}

TEST_F(ShieldTest, ImprovementUndefinedWithoutBaselineViolations) {
  const auto taut = specdsl::parse_spec("abs(x0) >= 0");
  ShieldedPolicy sp(constant_detector(0.0), orig, aux);
  const auto r =
      eval_shielded_attack_improvement(bench.env, taut, sp, box, {base(0.1)}, small_acq(), {1}, strided());
  EXPECT_FALSE(r.improvement.has_value());
  EXPECT_THROW(eval_shielded_attack_improvement(bench.env, spec, sp, box, {base(0.1)}, small_acq(), {1, 2}),
               ConfigError);
}

TEST_F(ShieldTest, NeverFiringShieldKeepsReturn) {
  ShieldedPolicy sp(constant_detector(0.0), orig, aux);
  const auto starts = perturbed_nominal_starts({base(0.1)}, box, 50, 7);
  EXPECT_EQ(mean_return(bench.env, *orig, starts), mean_return(bench.env, sp, starts));
  for (const auto& s : starts) EXPECT_GT(spec.reward(s), 0.0);
  EXPECT_THROW(mean_return(bench.env, sp, {}), ConfigError);
}

TEST_F(ShieldTest, SweepHasTenMonotoneRows) {
  ShieldedPolicy sp(angle_detector(), orig, aux);
  const auto adv = random_states(40, 8, 0.45);
  SweepOptions opts;
  opts.perf_runs = 20;
  opts.seed = 9;
  const auto rows = intervention_sweep(bench.env, spec, sp, detector::make_c_range(-1.0, 1.0), adv,
                                       {base(0.1)}, box, opts);
  ASSERT_EQ(rows.size(), 10u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GT(rows[i].c, rows[i - 1].c);
    EXPECT_GE(rows[i].intervention_count, rows[i - 1].intervention_count);
  }
  // at the top of the range every state is flagged and the shield is pi_aux
  EXPECT_EQ(rows.back().intervention_fraction, 1.0);
  EXPECT_EQ(rows.back().rollout_intervention_fraction, 1.0);
  EXPECT_EQ(rows.back().defense_rate, eval_defense(bench.env, spec, *aux, adv).rate);
  EXPECT_THROW(intervention_sweep(bench.env, spec, sp, detector::make_c_range(-1.0, 1.0), {}, {base(0.1)}, box),
               ConfigError);
}

TEST_F(ShieldTest, TrainEnvStartsAndRewards) {
  const auto adv = random_states(5, 10, 0.3);
  ShieldTrainOptions o;
  o.p_adv = 1.0;
  ShieldTrainEnv env(bench.env, spec, angle_detector(), adv, o);
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const State s = env.reset(rng);
    EXPECT_NE(std::find(adv.begin(), adv.end(), s), adv.end());
  }
  const State s{{0.1, 0.0}};
  const Action u{{0.0}};
  const auto tr = env.step(s, u);
  const State next = bench.env.step(s, u);
  EXPECT_EQ(tr.next, next);
  EXPECT_FALSE(tr.terminal);
  EXPECT_DOUBLE_EQ(tr.reward, detector_reward(angle_detector(), next) + spec.reward(next));

  const State edge{{0.49, 3.0}};
  const auto bad = env.step(edge, u);
  EXPECT_TRUE(bad.terminal);
  EXPECT_DOUBLE_EQ(bad.reward, 0.0 + spec.reward(bad.next) - o.termination_penalty);
}

TEST_F(ShieldTest, TrainEnvNonFiniteStepIsTerminal) {
  auto blow = envsim::EnvModel("blow", 2, 1, 10, [](const State& s, const Action&) {
    return State{{std::numeric_limits<double>::infinity(), s[1]}};
  }, envsim::quadratic_cost_reward, bench.env.init_box(), bench.env.action_box());
  ShieldTrainEnv env(blow, spec, angle_detector(), {}, {});
  const State s{{0.1, 0.1}};
  const auto tr = env.step(s, Action{{0.0}});
  EXPECT_TRUE(tr.terminal);
  EXPECT_EQ(tr.next, s);
  EXPECT_TRUE(std::isfinite(tr.reward));
}

TEST_F(ShieldTest, TrainEnvValidation) {
  ShieldTrainOptions o;
  o.p_adv = 1.5;
  EXPECT_THROW(ShieldTrainEnv(bench.env, spec, angle_detector(), {}, o), ConfigError);
  EXPECT_THROW(ShieldTrainEnv(bench.env, spec, angle_detector(), {Vector::Zero(3)}, {}), DimensionError);
}

TEST_F(ShieldTest, FallbackStartsUsePerturbedNominalStates) {
  ShieldTrainOptions o;
  o.fallback_box = box;
  ShieldTrainEnv env(bench.env, spec, angle_detector(), {}, o);
  EXPECT_TRUE(env.using_fallback());
  Rng rng(12);
  const Box reach(bench.env.init_box().lower() * 2.0, bench.env.init_box().upper() * 2.0);
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(reach.contains(env.reset(rng)));
}

TEST_F(ShieldTest, AuxTrainingIsSeedDeterministic) {
  const auto taut = specdsl::parse_spec("abs(x0) >= 0");
  neuralctl::TrainerConfig cfg;
  cfg.total_steps = 400;
  cfg.warmup_steps = 100;
  cfg.hidden = {16, 16};
  ShieldTrainOptions o;
  o.episode_length = 50;
  o.fallback_box = box;
  auto run = [&](std::uint64_t seed) {
    ShieldTrainEnv env(bench.env, taut, angle_detector(), {}, o);
    return train_aux(env, cfg, seed).policy;
  };
  const auto a = run(3), b = run(3);
  for (const auto& s : random_states(50, 13)) EXPECT_EQ(a->act(s), b->act(s));
}
