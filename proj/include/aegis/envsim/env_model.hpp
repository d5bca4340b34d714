#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aegis/core/types.hpp"

namespace aegis::envsim {

using StepFn = std::function<State(const State&, const Action&)>;
using RewardFn = std::function<double(const State&, const Action&)>;

/// s_{t+1} = A s_t + B u_t
struct LinearDynamics {
  Matrix A;
  Matrix B;
};

/// Discrete-time deterministic plant M = <S, A, f, R> with an initial box and
/// a fixed horizon. Immutable after construction; safe to share across
/// rollout workers.
class EnvModel {
 public:
  EnvModel(std::string name, std::size_t state_dim, std::size_t action_dim, std::size_t horizon,
           StepFn step, RewardFn reward, Box init_box, Box action_box);

  static EnvModel linear(std::string name, LinearDynamics dynamics, std::size_t horizon,
                         RewardFn reward, Box init_box, Box action_box);

  const std::string& name() const { return name_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  std::size_t horizon() const { return horizon_; }
  const Box& init_box() const { return init_box_; }
  const Box& action_box() const { return action_box_; }
  const std::optional<LinearDynamics>& linear_dynamics() const { return linear_; }

  /// Actions are clamped to the actuator box before being applied.
  State step(const State& s, const Action& u) const;
  double reward(const State& s, const Action& u) const;

 private:
  std::string name_;
  std::size_t state_dim_;
  std::size_t action_dim_;
  std::size_t horizon_;
  StepFn step_;
  RewardFn reward_;
  Box init_box_;
  Box action_box_;
  std::optional<LinearDynamics> linear_;
};

/// -s's - 0.01 u'u
double quadratic_cost_reward(const State& s, const Action& u);

/// Frictionless pendulum theta'' = (g/l) sin(theta) + u/(m l^2), theta = 0
/// upright, integrated with one fixed-step RK4 step of length dt.
struct PendulumParams {
  double g = 9.81;
  double m = 1.0;
  double l = 1.0;
  double dt = 0.05;
};
StepFn pendulum_step(PendulumParams params);

State sample_initial(const EnvModel& env, std::uint64_t seed);
State sample_initial(const EnvModel& env, Rng& rng);

}  // namespace aegis::envsim
