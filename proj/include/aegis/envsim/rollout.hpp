#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <vector>

#include "aegis/core/policy.hpp"
#include "aegis/envsim/env_model.hpp"

namespace aegis::envsim {

/// tau = (s_0, ..., s_T) with the actions taken between states.
/// states.size() == actions.size() + 1 <= horizon + 1.
struct Trajectory {
  std::vector<State> states;
  std::vector<Action> actions;
  double perf_return = 0.0;  // undiscounted sum of R(s_t, u_t)
  bool stopped_early = false;

  std::size_t length() const { return states.size(); }
};

struct RolloutOptions {
  /// Checked on every state including the start; the first state for which it
  /// returns true ends the rollout and is kept as the last state.
  std::function<bool(const State&)> stop;
  /// 0 means the environment horizon.
  std::size_t max_steps = 0;
};

/// Executes s_{t+1} = f(s_t, pi(s_t)). Throws NumericOverflowError naming the
/// step index if the plant produces a non-finite state.
Trajectory rollout(const EnvModel& env, const BlackBoxPolicy& policy, const State& start,
                   const RolloutOptions& options = {});

/// Keeps every `every`-th state (and the matching action) plus the final state.
Trajectory thin(const Trajectory& traj, std::size_t every);

/// One JSON object per line: {"traj":id,"t":k,"state":[...],"action":[...]};
/// the final state carries "action":null.
void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj, std::size_t id);
std::vector<Trajectory> read_trajectories_jsonl(std::istream& in);

}  // namespace aegis::envsim
