#include "aegis/neuralctl/ddpg.hpp"

#include <cmath>
#include <sstream>

#include "aegis/core/errors.hpp"
#include "aegis/neuralctl/adam.hpp"

namespace aegis::neuralctl {

EnvTask::EnvTask(envsim::EnvModel env, Options options) : env_(std::move(env)), opts_(std::move(options)) {
  if (opts_.observation_scale.size() != 0 &&
      static_cast<std::size_t>(opts_.observation_scale.size()) != env_.state_dim()) {
    throw DimensionError("observation scale size does not match the state dimension");
  }
  if (opts_.start_box && opts_.start_box->dim() != env_.state_dim()) {
    throw DimensionError("start box size does not match the state dimension");
  }
}

std::size_t EnvTask::episode_length() const {
  return opts_.episode_length == 0 ? env_.horizon() : opts_.episode_length;
}

State EnvTask::reset(Rng& rng) {
  return opts_.start_box ? State(opts_.start_box->sample(rng)) : envsim::sample_initial(env_, rng);
}

EpisodicTask::Transition EnvTask::step(const State& s, const Action& u) {
  Transition tr;
  tr.next = env_.step(s, u);
  const Action applied = env_.action_box().clamp(u);
  tr.reward = opts_.reward ? opts_.reward(s, applied, tr.next) : env_.reward(s, applied);
  if (opts_.terminal && opts_.terminal(tr.next)) {
    tr.terminal = true;
    tr.reward -= opts_.termination_penalty;
  }
  return tr;
}

Vector EnvTask::observation_scale() const {
  return opts_.observation_scale.size() == 0 ? EpisodicTask::observation_scale() : opts_.observation_scale;
}

void TrainerConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size == 0 || replay_capacity < batch_size) {
    throw ConfigError("replay capacity must hold at least one batch");
  }
  if (total_steps == 0) throw ConfigError("total_steps must be positive");
  if (!(exploration_noise_std >= 0.0)) throw ConfigError("exploration noise must be non-negative");
  if (!(reward_scale > 0.0)) throw ConfigError("reward_scale must be positive");
  if (updates_per_step == 0) throw ConfigError("updates_per_step must be positive");
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("hidden layer sizes must be positive");
  }
}

namespace {

// Ring buffer with columns as samples so mini-batches are plain gathers.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t obs_dim, std::size_t act_dim)
      : obs_(static_cast<Eigen::Index>(obs_dim), static_cast<Eigen::Index>(capacity)),
        act_(static_cast<Eigen::Index>(act_dim), static_cast<Eigen::Index>(capacity)),
        next_(static_cast<Eigen::Index>(obs_dim), static_cast<Eigen::Index>(capacity)),
        reward_(static_cast<Eigen::Index>(capacity)),
        done_(static_cast<Eigen::Index>(capacity)),
        capacity_(capacity) {}

  void add(const Vector& o, const Vector& a, double r, const Vector& o2, bool done) {
    const auto i = static_cast<Eigen::Index>(head_);
    obs_.col(i) = o;
    act_.col(i) = a;
    next_.col(i) = o2;
    reward_[i] = r;
    done_[i] = done ? 1.0 : 0.0;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  std::size_t size() const { return size_; }

  void sample(Rng& rng, std::size_t n, Matrix& o, Matrix& a, Vector& r, Matrix& o2, Vector& d) const {
    const auto nn = static_cast<Eigen::Index>(n);
    o.resize(obs_.rows(), nn);
    a.resize(act_.rows(), nn);
    o2.resize(obs_.rows(), nn);
    r.resize(nn);
    d.resize(nn);
    for (Eigen::Index j = 0; j < nn; ++j) {
      const auto i = static_cast<Eigen::Index>(uniform_index(rng, size_));
      o.col(j) = obs_.col(i);
      a.col(j) = act_.col(i);
      o2.col(j) = next_.col(i);
      r[j] = reward_[i];
      d[j] = done_[i];
    }
  }

 private:
  Matrix obs_, act_, next_;
  Vector reward_, done_;
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix m(top.rows() + bottom.rows(), top.cols());
  m << top, bottom;
  return m;
}

}  // namespace

TrainResult train_ddpg(EpisodicTask& task, const TrainerConfig& cfg, std::uint64_t seed,
                       const std::string& policy_name) {
  cfg.validate();
  const std::size_t n = task.state_dim();
  const Box& abox = task.action_box();
  const std::size_t m = abox.dim();
  const Vector scale = task.observation_scale();
  if (static_cast<std::size_t>(scale.size()) != n) throw DimensionError("observation scale size mismatch");

  Rng init_rng(derive_seed(seed, "init"));
  Rng env_rng(derive_seed(seed, "env"));
  Rng noise_rng(derive_seed(seed, "noise"));
  Rng batch_rng(derive_seed(seed, "batch"));

  std::vector<std::size_t> actor_sizes{n};
  actor_sizes.insert(actor_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  actor_sizes.push_back(m);
  std::vector<std::size_t> critic_sizes{n + m};
  critic_sizes.insert(critic_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  critic_sizes.push_back(1);

  DenseNet actor = DenseNet::make(actor_sizes, Activation::relu, Activation::tanh, init_rng);
  DenseNet critic = DenseNet::make(critic_sizes, Activation::relu, Activation::identity, init_rng);
  DenseNet actor_target = actor;
  DenseNet critic_target = critic;
  Adam actor_opt(actor, {.learning_rate = cfg.actor_lr});
  Adam critic_opt(critic, {.learning_rate = cfg.critic_lr});
  ReplayBuffer replay(cfg.replay_capacity, n, m);

  const Vector half = 0.5 * abox.width();
  const Vector center = abox.center();
  const auto to_action = [&](const Vector& a_norm) { return Action(center + half.cwiseProduct(a_norm)); };

  TrainResult result;
  const std::size_t ep_len = task.episode_length();
  State s = task.reset(env_rng);
  std::size_t t_in_episode = 0;
  double ep_return = 0.0;

  Matrix o, a, o2;
  Vector r, d;
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const Vector obs = s.cwiseQuotient(scale);
    Vector a_norm(static_cast<Eigen::Index>(m));
    if (step < cfg.warmup_steps) {
      for (std::size_t i = 0; i < m; ++i) a_norm[static_cast<Eigen::Index>(i)] = uniform(noise_rng, -1.0, 1.0);
    } else {
      a_norm = actor.forward(obs);
      for (std::size_t i = 0; i < m; ++i) {
        a_norm[static_cast<Eigen::Index>(i)] += cfg.exploration_noise_std * standard_normal(noise_rng);
      }
      a_norm = a_norm.cwiseMax(-1.0).cwiseMin(1.0);
    }
    auto tr = task.step(s, to_action(a_norm));
    if (!all_finite(tr.next) || !std::isfinite(tr.reward)) {
      // treat a blown-up plant as a terminal failure of this episode
      tr.terminal = true;
      if (!all_finite(tr.next)) tr.next = s;
      if (!std::isfinite(tr.reward)) tr.reward = -1e6;
    }
    ++t_in_episode;
    ep_return += tr.reward;
    replay.add(obs, a_norm, cfg.reward_scale * tr.reward, tr.next.cwiseQuotient(scale), tr.terminal);

    if (tr.terminal || t_in_episode >= ep_len) {
      result.episode_returns.push_back(ep_return);
      ++result.episodes;
      s = task.reset(env_rng);
      t_in_episode = 0;
      ep_return = 0.0;
    } else {
      s = std::move(tr.next);
    }

    if (step + 1 < cfg.warmup_steps || replay.size() < cfg.batch_size) continue;
    for (std::size_t u = 0; u < cfg.updates_per_step; ++u) {
      replay.sample(batch_rng, cfg.batch_size, o, a, r, o2, d);
      const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

      // critic: minimize mean (Q(o,a) - y)^2
      const Matrix a2 = actor_target.forward_batch(o2);
      const Vector q2 = critic_target.forward_batch(stack(o2, a2)).row(0).transpose();
      const Vector y = r + cfg.gamma * (Vector::Ones(r.size()) - d).cwiseProduct(q2);
      const Vector q = critic.forward_cached(stack(o, a)).row(0).transpose();
      const Vector err = q - y;
      const double loss = err.squaredNorm() * inv_b;
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "critic loss became non-finite at step " << step << " (episode " << result.episodes
            << ", last finite loss " << result.final_critic_loss << ")";
        throw TrainingError(msg.str());
      }
      result.final_critic_loss = loss;
      auto cg = critic.backward((2.0 * inv_b) * err.transpose());
      critic_opt.step(critic, cg);

      // actor: maximize mean Q(o, mu(o))
      const Matrix mu = actor.forward_cached(o);
      critic.forward_cached(stack(o, mu));
      const auto qg = critic.backward(Matrix::Constant(1, o.cols(), -inv_b));
      const Matrix dmu = qg.input.bottomRows(static_cast<Eigen::Index>(m));
      auto ag = actor.backward(dmu);
      actor_opt.step(actor, ag);

      actor_target.soft_update(actor, cfg.tau);
      critic_target.soft_update(critic, cfg.tau);
    }
  }
  if (!actor.all_finite()) throw TrainingError("actor parameters became non-finite");
  actor.clear_cache();
  result.steps = cfg.total_steps;
  result.policy = std::make_shared<NeuralPolicy>(std::move(actor), abox, scale, policy_name);
  return result;
}

}  // namespace aegis::neuralctl
