#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "aegis/core/errors.hpp"
#include "aegis/envsim/benchmarks.hpp"
#include "aegis/envsim/rollout.hpp"
#include "aegis/neuralctl/adam.hpp"
#include "aegis/neuralctl/ddpg.hpp"
#include "aegis/neuralctl/dense_net.hpp"
#include "aegis/neuralctl/policies.hpp"
#include "aegis/specdsl/spec.hpp"

using namespace aegis;
using namespace aegis::neuralctl;

namespace {

// Straight loops over the weights, no Eigen products.
Vector oracle_forward(const DenseNet& net, const Vector& x) {
  std::vector<double> a(x.data(), x.data() + x.size());
  for (const auto& layer : net.layers()) {
    std::vector<double> z(static_cast<std::size_t>(layer.weight.rows()));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      double acc = layer.bias[i];
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) acc += layer.weight(i, j) * a[static_cast<std::size_t>(j)];
      switch (layer.activation) {
        case Activation::identity: break;
        case Activation::relu: acc = acc > 0.0 ? acc : 0.0; break;
        case Activation::tanh: acc = std::tanh(acc); break;
      }
      z[static_cast<std::size_t>(i)] = acc;
    }
    a = std::move(z);
  }
  return from_std(a);
}

DenseNet random_net(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out, Activation act,
                    Activation head) {
  return DenseNet::make({in, hidden, hidden, out}, act, head, rng, 1.0);
}

envsim::EnvModel integrator_env() {
  return envsim::EnvModel(
      "integrator", 1, 1, 50,
      [](const State& s, const Action& u) { return State(s + 0.1 * u); },
      [](const State& s, const Action&) { return -s.squaredNorm(); }, Box::uniform(1, -1.0, 1.0),
      Box::uniform(1, -1.0, 1.0));
}

}  // namespace

TEST(DenseNet, ZeroParametersGiveZeroOutput) {
  DenseLayer layer{Matrix::Zero(3, 4), Vector::Zero(3), Activation::identity};
  const DenseNet net({layer});
  EXPECT_TRUE(net.forward(Vector(Vector::Random(4))).isZero(0.0));
}

TEST(DenseNet, IdentityLayerPassesInputThrough) {
  const DenseNet net({DenseLayer{Matrix::Identity(3, 3), Vector::Zero(3), Activation::identity}});
  const Vector x = Vector::Random(3);
  EXPECT_TRUE(bitwise_equal(net.forward(x), x));
}

TEST(DenseNet, ForwardMatchesLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = random_net(rng, 5, 16, 3, Activation::relu, trial % 2 ? Activation::tanh : Activation::identity);
    const Vector x = Vector::Random(5) * 2.0;
    EXPECT_LE((net.forward(x) - oracle_forward(net, x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(DenseNet, BatchForwardMatchesPerSample) {
  Rng rng(4);
  auto net = random_net(rng, 3, 8, 2, Activation::tanh, Activation::identity);
  const Matrix batch = Matrix::Random(3, 7);
  const Matrix out = net.forward_batch(batch);
  for (Eigen::Index j = 0; j < batch.cols(); ++j) {
    EXPECT_LE((out.col(j) - net.forward(Vector(batch.col(j)))).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_TRUE(net.forward_cached(batch).isApprox(out, 0.0));
}

TEST(DenseNet, ShapeErrors) {
  EXPECT_THROW(DenseNet({DenseLayer{Matrix::Zero(3, 2), Vector::Zero(2), Activation::relu}}), DimensionError);
  EXPECT_THROW(DenseNet({DenseLayer{Matrix::Zero(3, 2), Vector::Zero(3), Activation::relu},
                         DenseLayer{Matrix::Zero(1, 4), Vector::Zero(1), Activation::relu}}),
               DimensionError);
  const DenseNet net({DenseLayer{Matrix::Zero(3, 2), Vector::Zero(3), Activation::relu}});
  EXPECT_THROW(net.forward(Vector(Vector::Zero(5))), DimensionError);
}

TEST(DenseNet, BackwardWithoutForwardThrows) {
  Rng rng(1);
  const auto net = random_net(rng, 2, 4, 1, Activation::relu, Activation::identity);
  EXPECT_THROW(net.backward(Matrix::Ones(1, 1)), Error);
}

TEST(DenseNet, LinearLayerGradientIsInput) {
  Rng rng(2);
  DenseNet net({DenseLayer{Matrix::Random(3, 4), Vector::Random(3), Activation::identity}});
  const Vector x = Vector::Random(4);
  net.forward_cached(x);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const auto g = net.backward(Vector::Unit(3, i));
    EXPECT_TRUE(g.weight[0].row(i).isApprox(x.transpose(), 0.0));
    EXPECT_DOUBLE_EQ(g.weight[0].cwiseAbs().sum(), x.cwiseAbs().sum());
    EXPECT_DOUBLE_EQ(g.bias[0][i], 1.0);
  }
}

TEST(DenseNet, ZeroUpstreamGivesZeroGradients) {
  Rng rng(5);
  auto net = random_net(rng, 3, 8, 2, Activation::relu, Activation::tanh);
  net.forward_cached(Vector::Random(3));
  const auto g = net.backward(Matrix::Zero(2, 1));
  for (const auto& w : g.weight) EXPECT_TRUE(w.isZero(0.0));
  for (const auto& b : g.bias) EXPECT_TRUE(b.isZero(0.0));
}

// Property: analytic gradients agree with central differences (h = 1e-5).
TEST(DenseNet, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto net = random_net(rng, 4, 6, 2, trial % 2 ? Activation::tanh : Activation::relu,
                          trial % 3 ? Activation::tanh : Activation::identity);
    const Vector x = Vector::Random(4);
    const Vector up = Vector::Random(2);
    net.forward_cached(x);
    const auto g = net.backward(up);
    Vector analytic(static_cast<Eigen::Index>(net.parameter_count()));
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      analytic.segment(k, g.weight[l].size()) = g.weight[l].reshaped();
      k += g.weight[l].size();
      analytic.segment(k, g.bias[l].size()) = g.bias[l];
      k += g.bias[l].size();
    }
    const Vector theta = net.parameters();
    const double h = 1e-5;
    for (Eigen::Index p = 0; p < theta.size(); ++p) {
      Vector tp = theta, tm = theta;
      tp[p] += h;
      tm[p] -= h;
      net.set_parameters(tp);
      const double fp = up.dot(net.forward(x));
      net.set_parameters(tm);
      const double fm = up.dot(net.forward(x));
      const double numeric = (fp - fm) / (2 * h);
      const double rel = std::abs(numeric - analytic[p]) / std::max(1.0, std::abs(numeric) + std::abs(analytic[p]));
      worst = std::max(worst, rel);
    }
    net.set_parameters(theta);
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(DenseNet, ParameterRoundTripAndSoftUpdate) {
  Rng rng(6);
  auto a = random_net(rng, 2, 4, 1, Activation::relu, Activation::identity);
  auto b = random_net(rng, 2, 4, 1, Activation::relu, Activation::identity);
  const Vector ta = a.parameters();
  const Vector tb = b.parameters();
  a.soft_update(b, 0.25);
  EXPECT_LE((a.parameters() - (0.25 * tb + 0.75 * ta)).cwiseAbs().maxCoeff(), 1e-15);
  a.set_parameters(ta);
  EXPECT_TRUE(bitwise_equal(a.parameters(), ta));
}

TEST(Adam, MinimizesQuadratic) {
  // single linear unit fitting y = 2x + 1
  DenseNet net({DenseLayer{Matrix::Zero(1, 1), Vector::Zero(1), Activation::identity}});
  Adam opt(net, {.learning_rate = 0.05});
  const Matrix x = Matrix::Random(1, 32);
  const Matrix y = (2.0 * x).array() + 1.0;
  for (int i = 0; i < 2000; ++i) {
    const Matrix out = net.forward_cached(x);
    opt.step(net, net.backward((out - y) / 32.0));
  }
  EXPECT_NEAR(net.layers()[0].weight(0, 0), 2.0, 1e-3);
  EXPECT_NEAR(net.layers()[0].bias[0], 1.0, 1e-3);
}

TEST(TrainerConfig, RejectsInvalidSettings) {
  TrainerConfig cfg;
  cfg.gamma = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.gamma = 0.99;
  cfg.actor_lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.actor_lr = 1e-4;
  cfg.batch_size = 10;
  cfg.replay_capacity = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  auto env = integrator_env();
  EnvTask task(env, {});
  TrainerConfig bad;
  bad.gamma = 1.5;
  EXPECT_THROW(train_ddpg(task, bad, 0), ConfigError);
}

TEST(Ddpg, IntegratorDrivenToOrigin) {
  auto env = integrator_env();
  EnvTask task(env, {});
  TrainerConfig cfg;
  cfg.total_steps = 50000;
  cfg.tau = 5e-3;
  const auto res = train_ddpg(task, cfg, 2);
  double mean_abs = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto traj = envsim::rollout(env, *res.policy, envsim::sample_initial(env, 500 + i));
    mean_abs += std::abs(traj.states.back()[0]) / 100.0;
  }
  EXPECT_LT(mean_abs, 0.1);
}

TEST(Ddpg, SameSeedSameParameters) {
  auto env = integrator_env();
  EnvTask task(env, {});
  TrainerConfig cfg;
  cfg.total_steps = 1500;
  cfg.warmup_steps = 200;
  const auto a = train_ddpg(task, cfg, 5);
  const auto b = train_ddpg(task, cfg, 5);
  const auto c = train_ddpg(task, cfg, 6);
  EXPECT_TRUE(bitwise_equal(a.policy->actor().parameters(), b.policy->actor().parameters()));
  EXPECT_FALSE(bitwise_equal(a.policy->actor().parameters(), c.policy->actor().parameters()));
}

TEST(Ddpg, DivergenceIsReported) {
  auto env = integrator_env();
  EnvTask::Options opts;
  opts.reward = [](const State&, const Action&, const State&) { return 1e308; };
  EnvTask task(env, opts);
  TrainerConfig cfg;
  cfg.total_steps = 400;
  cfg.warmup_steps = 100;
  cfg.reward_scale = 10.0;
  EXPECT_THROW(train_ddpg(task, cfg, 1), TrainingError);
}

TEST(Ddpg, PendulumVictimIsNominallySafe) {
  const auto bench = envsim::make_benchmark("pendulum");
  const auto spec = specdsl::parse_spec(bench.spec_text);
  EnvTask::Options opts;
  opts.terminal = [&](const State& s) { return !spec.holds(s); };
  opts.termination_penalty = 100.0;
  EnvTask task(bench.env, opts);
  TrainerConfig cfg;
  cfg.total_steps = 20000;
  cfg.tau = 5e-3;
  const auto res = train_ddpg(task, cfg, 1);
  int safe = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto traj = envsim::rollout(bench.env, *res.policy, envsim::sample_initial(bench.env, 10000 + i));
    bool ok = true;
    for (const auto& s : traj.states) ok = ok && spec.holds(s);
    safe += ok ? 1 : 0;
  }
  EXPECT_GE(safe, 950);
}

TEST(NeuralPolicy, DeterministicAndClipped) {
  Rng rng(8);
  auto net = DenseNet::make({2, 8, 1}, Activation::relu, Activation::tanh, rng, 5.0);
  const NeuralPolicy policy(net, Box::uniform(1, -2.0, 2.0), Vector::Ones(2));
  for (int i = 0; i < 100; ++i) {
    const State s = State::Random(2) * 10.0;
    const auto u1 = policy.act(s);
    EXPECT_TRUE(bitwise_equal(u1, policy.act(s)));
    EXPECT_LE(std::abs(u1[0]), 2.0);
  }
  EXPECT_THROW(policy.act(State::Zero(3)), DimensionError);
}

TEST(Lqr, ScalarStableSystem) {
  Matrix A(1, 1), B(1, 1), Q(1, 1), R(1, 1);
  A << 0.5;
  B << 1.0;
  Q << 1.0;
  R << 1.0;
  const auto sol = solve_dare(A, B, Q, R);
  EXPECT_LT(std::abs(A(0, 0) - B(0, 0) * sol.K(0, 0)), 1.0);
  // closed form: P = 1 + 0.25 P / (1 + P)
  const double p = sol.P(0, 0);
  EXPECT_NEAR(p, 1.0 + 0.25 * p / (1.0 + p), 1e-9);
}

TEST(Lqr, UnstabilizablePairIsError) {
  Matrix A(1, 1), B(1, 1), Q(1, 1), R(1, 1);
  A << 2.0;
  B << 0.0;
  Q << 1.0;
  R << 1.0;
  EXPECT_THROW(solve_dare(A, B, Q, R), NumericError);
}

TEST(Lqr, NonlinearEnvRejected) {
  const auto bench = envsim::make_benchmark("pendulum");
  EXPECT_THROW(make_lqr_policy(bench.env, Matrix::Identity(2, 2), Matrix::Identity(1, 1)), ConfigError);
}

TEST(Lqr, CarPlatoonVictimAlwaysSafe) {
  const auto bench = envsim::make_benchmark("carplatoon4");
  const auto spec = specdsl::parse_spec(bench.spec_text);
  const auto policy = make_lqr_policy(bench.env, bench.lqr_q->asDiagonal(), bench.lqr_r->asDiagonal());
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto traj = envsim::rollout(bench.env, *policy, envsim::sample_initial(bench.env, i));
    for (const auto& s : traj.states) ASSERT_TRUE(spec.holds(s)) << "rollout " << i;
  }
}

TEST(Checkpoint, NeuralAndLinearRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "aegis_test_ckpt";
  std::filesystem::create_directories(dir);
  Rng rng(9);
  const NeuralPolicy neural(DenseNet::make({3, 8, 8, 2}, Activation::relu, Activation::tanh, rng, 1.0),
                            Box::uniform(2, -1.0, 3.0), Vector::Constant(3, 0.5), "victim");
  save_policy(neural, dir / "n.json");
  const auto back = load_policy(dir / "n.json");
  EXPECT_EQ(back->name(), "victim");
  for (int i = 0; i < 20; ++i) {
    const State s = State::Random(3);
    EXPECT_TRUE(bitwise_equal(back->act(s), neural.act(s)));
  }
  const LinearFeedbackPolicy lin(Matrix::Random(2, 3), Box::uniform(2, -1.0, 1.0));
  save_policy(lin, dir / "l.json");
  const State s = State::Random(3);
  EXPECT_TRUE(bitwise_equal(load_policy(dir / "l.json")->act(s), lin.act(s)));

  auto j = policy_to_json(lin);
  j["format_version"] = 99;
  EXPECT_THROW(policy_from_json(j), ConfigError);
  EXPECT_THROW(load_policy(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}
