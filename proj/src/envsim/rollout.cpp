#include "aegis/envsim/rollout.hpp"

#include <istream>
#include <map>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "aegis/core/errors.hpp"

namespace aegis::envsim {

Trajectory rollout(const EnvModel& env, const BlackBoxPolicy& policy, const State& start,
                   const RolloutOptions& options) {
  if (static_cast<std::size_t>(start.size()) != env.state_dim()) {
    throw DimensionError("rollout: start state has " + std::to_string(start.size()) +
                         " entries, expected " + std::to_string(env.state_dim()));
  }
  if (policy.action_dim() != env.action_dim()) {
    throw DimensionError("rollout: policy action dimension does not match " + env.name());
  }
  if (!all_finite(start)) throw NumericOverflowError(0, "rollout: non-finite start state");

  const std::size_t steps = options.max_steps == 0 ? env.horizon() : options.max_steps;
  Trajectory traj;
  traj.states.reserve(steps + 1);
  traj.actions.reserve(steps);
  traj.states.push_back(start);
  if (options.stop && options.stop(start)) {
    traj.stopped_early = true;
    return traj;
  }
  for (std::size_t t = 0; t < steps; ++t) {
    const State& s = traj.states.back();
    Action u = policy.act(s);
    State next = env.step(s, u);
    if (!all_finite(next)) {
      throw NumericOverflowError(t + 1, "rollout: non-finite state at step " + std::to_string(t + 1) +
                                            " in " + env.name());
    }
    traj.perf_return += env.reward(s, u);
    traj.actions.push_back(std::move(u));
    traj.states.push_back(std::move(next));
    if (options.stop && options.stop(traj.states.back())) {
      traj.stopped_early = true;
      break;
    }
  }
  return traj;
}

Trajectory thin(const Trajectory& traj, std::size_t every) {
  if (every <= 1 || traj.states.size() <= 2) return traj;
  Trajectory out;
  out.perf_return = traj.perf_return;
  out.stopped_early = traj.stopped_early;
  const std::size_t last = traj.states.size() - 1;
  for (std::size_t i = 0; i < last; i += every) {
    out.states.push_back(traj.states[i]);
    out.actions.push_back(traj.actions[i]);
  }
  out.states.push_back(traj.states[last]);
  // keep |states| == |actions| + 1
  if (out.actions.size() == out.states.size()) out.actions.pop_back();
  return out;
}

void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj, std::size_t id) {
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    nlohmann::json line;
    line["traj"] = id;
    line["t"] = t;
    line["state"] = to_std(traj.states[t]);
    if (t < traj.actions.size()) {
      line["action"] = to_std(traj.actions[t]);
    } else {
      line["action"] = nullptr;
    }
    out << line.dump() << '\n';
  }
}

std::vector<Trajectory> read_trajectories_jsonl(std::istream& in) {
  std::map<std::size_t, Trajectory> by_id;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    nlohmann::json line;
    try {
      line = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, 1, e.what());
    }
    auto& traj = by_id[line.at("traj").get<std::size_t>()];
    traj.states.push_back(from_std(line.at("state").get<std::vector<double>>()));
    if (!line.at("action").is_null()) {
      traj.actions.push_back(from_std(line.at("action").get<std::vector<double>>()));
    }
  }
  std::vector<Trajectory> result;
  result.reserve(by_id.size());
  for (auto& [id, traj] : by_id) result.push_back(std::move(traj));
  return result;
}

}  // namespace aegis::envsim
