#include "aegis/envsim/env_model.hpp"

#include <cmath>
#include <utility>

#include "aegis/core/errors.hpp"

namespace aegis::envsim {

EnvModel::EnvModel(std::string name, std::size_t state_dim, std::size_t action_dim,
                   std::size_t horizon, StepFn step, RewardFn reward, Box init_box,
                   Box action_box)
    : name_(std::move(name)),
      state_dim_(state_dim),
      action_dim_(action_dim),
      horizon_(horizon),
      step_(std::move(step)),
      reward_(std::move(reward)),
      init_box_(std::move(init_box)),
      action_box_(std::move(action_box)) {
  if (state_dim_ == 0 || action_dim_ == 0) throw ConfigError(name_ + ": dimensions must be positive");
  if (horizon_ == 0) throw ConfigError(name_ + ": horizon must be at least 1");
  if (init_box_.dim() != state_dim_) throw DimensionError(name_ + ": init box dimension mismatch");
  if (action_box_.dim() != action_dim_) {
    throw DimensionError(name_ + ": action box dimension mismatch");
  }
  if (!step_ || !reward_) throw ConfigError(name_ + ": missing step or reward function");
}

EnvModel EnvModel::linear(std::string name, LinearDynamics dynamics, std::size_t horizon,
                          RewardFn reward, Box init_box, Box action_box) {
  const auto n = static_cast<std::size_t>(dynamics.A.rows());
  const auto m = static_cast<std::size_t>(dynamics.B.cols());
  if (dynamics.A.cols() != dynamics.A.rows() || dynamics.B.rows() != dynamics.A.rows()) {
    throw DimensionError(name + ": A must be n x n and B n x m");
  }
  StepFn step = [A = dynamics.A, B = dynamics.B](const State& s, const Action& u) -> State {
    return A * s + B * u;
  };
  EnvModel env(std::move(name), n, m, horizon, std::move(step), std::move(reward),
               std::move(init_box), std::move(action_box));
  env.linear_ = std::move(dynamics);
  return env;
}

State EnvModel::step(const State& s, const Action& u) const {
  if (static_cast<std::size_t>(s.size()) != state_dim_) {
    throw DimensionError(name_ + ": state has " + std::to_string(s.size()) + " entries, expected " +
                         std::to_string(state_dim_));
  }
  if (static_cast<std::size_t>(u.size()) != action_dim_) {
    throw DimensionError(name_ + ": action has " + std::to_string(u.size()) +
                         " entries, expected " + std::to_string(action_dim_));
  }
  return step_(s, action_box_.clamp(u));
}

double EnvModel::reward(const State& s, const Action& u) const { return reward_(s, u); }

double quadratic_cost_reward(const State& s, const Action& u) {
  return -s.squaredNorm() - 0.01 * u.squaredNorm();
}

StepFn pendulum_step(PendulumParams p) {
  if (!(p.dt > 0.0) || !(p.m > 0.0) || !(p.l > 0.0)) throw ConfigError("pendulum: invalid parameters");
  return [p](const State& s, const Action& u) -> State {
    const double torque = u[0] / (p.m * p.l * p.l);
    const double k = p.g / p.l;
    auto deriv = [&](double theta, double omega) {
      return std::pair<double, double>{omega, k * std::sin(theta) + torque};
    };
    const double th = s[0];
    const double om = s[1];
    const double h = p.dt;
    const auto [a1, b1] = deriv(th, om);
    const auto [a2, b2] = deriv(th + 0.5 * h * a1, om + 0.5 * h * b1);
    const auto [a3, b3] = deriv(th + 0.5 * h * a2, om + 0.5 * h * b2);
    const auto [a4, b4] = deriv(th + h * a3, om + h * b3);
    State next(2);
    next[0] = th + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    next[1] = om + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    return next;
  };
}

State sample_initial(const EnvModel& env, Rng& rng) { return env.init_box().sample(rng); }

State sample_initial(const EnvModel& env, std::uint64_t seed) {
  Rng rng(seed);
  return sample_initial(env, rng);
}

}  // namespace aegis::envsim
