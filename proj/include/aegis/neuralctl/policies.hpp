#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "aegis/core/policy.hpp"
#include "aegis/envsim/env_model.hpp"
#include "aegis/neuralctl/dense_net.hpp"

namespace aegis::neuralctl {

/// Actor network with a tanh head in [-1, 1]^m, rescaled onto the actuator box.
/// The network sees s ./ input_scale.
class NeuralPolicy : public BlackBoxPolicy {
 public:
  NeuralPolicy(DenseNet actor, Box action_box, Vector input_scale, std::string name = "neural");

  Action act(const State& s) const override;
  std::size_t action_dim() const override { return action_box_.dim(); }
  std::string name() const override { return name_; }

  /// Network output in [-1, 1] before rescaling.
  Vector normalized_action(const State& s) const;
  Vector observe(const State& s) const;

  const DenseNet& actor() const { return actor_; }
  const Box& action_box() const { return action_box_; }
  const Vector& input_scale() const { return input_scale_; }

 private:
  DenseNet actor_;
  Box action_box_;
  Vector input_scale_;
  std::string name_;
};

/// u = clamp(-K s)
class LinearFeedbackPolicy : public BlackBoxPolicy {
 public:
  LinearFeedbackPolicy(Matrix gain, Box action_box, std::string name = "lqr");

  Action act(const State& s) const override;
  std::size_t action_dim() const override { return action_box_.dim(); }
  std::string name() const override { return name_; }
  const Matrix& gain() const { return gain_; }
  const Box& action_box() const { return action_box_; }

 private:
  Matrix gain_;
  Box action_box_;
  std::string name_;
};

struct RiccatiSolution {
  Matrix P;
  Matrix K;
  std::size_t iterations = 0;
};

/// Discrete algebraic Riccati equation by fixed-point iteration. Throws
/// NumericError when the iteration does not settle within max_iterations or
/// the resulting closed loop is not stable.
RiccatiSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                           double tolerance = 1e-9, std::size_t max_iterations = 10000);

std::shared_ptr<LinearFeedbackPolicy> make_lqr_policy(const envsim::EnvModel& env, const Matrix& Q,
                                                      const Matrix& R);

/// Checkpoints are JSON documents with a "format_version" field and a
/// "type" of "neural" or "linear".
inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const DenseNet& net);
DenseNet dense_net_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const BlackBoxPolicy& policy);
PolicyPtr policy_from_json(const nlohmann::json& j);

void save_policy(const BlackBoxPolicy& policy, const std::filesystem::path& file);
PolicyPtr load_policy(const std::filesystem::path& file);

}  // namespace aegis::neuralctl
