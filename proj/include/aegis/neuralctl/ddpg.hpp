#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "aegis/envsim/env_model.hpp"
#include "aegis/neuralctl/policies.hpp"

namespace aegis::neuralctl {

/// Episodic training interface: reset draws a start state, step applies an
/// action and reports reward and termination.
class EpisodicTask {
 public:
  struct Transition {
    State next;
    double reward = 0.0;
    bool terminal = false;
  };

  virtual ~EpisodicTask() = default;
  virtual std::size_t state_dim() const = 0;
  virtual const Box& action_box() const = 0;
  virtual std::size_t episode_length() const = 0;
  virtual State reset(Rng& rng) = 0;
  virtual Transition step(const State& s, const Action& u) = 0;
  /// Per-dimension divisor applied to states before they reach the networks.
  virtual Vector observation_scale() const { return Vector::Ones(static_cast<Eigen::Index>(state_dim())); }
};

/// Wraps an EnvModel. Reward defaults to the plant reward; an optional
/// terminal predicate ends episodes and adds a one-off penalty.
class EnvTask : public EpisodicTask {
 public:
  using RewardFn = std::function<double(const State& s, const Action& u, const State& next)>;

  struct Options {
    std::size_t episode_length = 0;  // 0: env horizon
    RewardFn reward;
    std::function<bool(const State&)> terminal;
    double termination_penalty = 0.0;
    Vector observation_scale;  // empty: ones
    /// Start states are drawn from this box; empty: the env init box.
    std::optional<Box> start_box;
  };

  EnvTask(envsim::EnvModel env, Options options);

  std::size_t state_dim() const override { return env_.state_dim(); }
  const Box& action_box() const override { return env_.action_box(); }
  std::size_t episode_length() const override;
  State reset(Rng& rng) override;
  Transition step(const State& s, const Action& u) override;
  Vector observation_scale() const override;

 private:
  envsim::EnvModel env_;
  Options opts_;
};

struct TrainerConfig {
  double gamma = 0.99;
  double tau = 1e-3;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::size_t replay_capacity = 100000;
  std::size_t batch_size = 64;
  std::size_t total_steps = 50000;
  std::size_t warmup_steps = 1000;
  /// Gaussian exploration noise, as a fraction of the action half-width.
  double exploration_noise_std = 0.1;
  /// Multiplies rewards before they enter the replay buffer.
  double reward_scale = 1.0;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t updates_per_step = 1;

  void validate() const;
};

struct TrainResult {
  std::shared_ptr<NeuralPolicy> policy;
  std::vector<double> episode_returns;
  std::size_t steps = 0;
  std::size_t episodes = 0;
  double final_critic_loss = 0.0;
};

/// Deterministic given the seed. Throws TrainingError if the critic loss
/// becomes non-finite.
TrainResult train_ddpg(EpisodicTask& task, const TrainerConfig& cfg, std::uint64_t seed,
                       const std::string& policy_name = "ddpg");

}  // namespace aegis::neuralctl
