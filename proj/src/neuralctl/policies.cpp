#include "aegis/neuralctl/policies.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Eigenvalues>

#include "aegis/core/errors.hpp"

namespace aegis::neuralctl {

using nlohmann::json;

NeuralPolicy::NeuralPolicy(DenseNet actor, Box action_box, Vector input_scale, std::string name)
    : actor_(std::move(actor)),
      action_box_(std::move(action_box)),
      input_scale_(std::move(input_scale)),
      name_(std::move(name)) {
  if (actor_.output_dim() != action_box_.dim()) {
    throw DimensionError("actor output size does not match the action box");
  }
  if (static_cast<std::size_t>(input_scale_.size()) != actor_.input_dim()) {
    throw DimensionError("input scale size does not match the actor input");
  }
  if (!((input_scale_.array() > 0.0).all())) throw ConfigError("input scale must be positive");
}

Vector NeuralPolicy::observe(const State& s) const {
  if (s.size() != input_scale_.size()) {
    throw DimensionError("policy input has " + std::to_string(s.size()) + " entries, expected " +
                         std::to_string(input_scale_.size()));
  }
  return s.cwiseQuotient(input_scale_);
}

Vector NeuralPolicy::normalized_action(const State& s) const { return actor_.forward(observe(s)); }

Action NeuralPolicy::act(const State& s) const {
  const Vector a = normalized_action(s);
  const Vector half = 0.5 * action_box_.width();
  return action_box_.clamp(action_box_.center() + half.cwiseProduct(a));
}

LinearFeedbackPolicy::LinearFeedbackPolicy(Matrix gain, Box action_box, std::string name)
    : gain_(std::move(gain)), action_box_(std::move(action_box)), name_(std::move(name)) {
  if (static_cast<std::size_t>(gain_.rows()) != action_box_.dim()) {
    throw DimensionError("gain rows do not match the action dimension");
  }
  if (!gain_.allFinite()) throw NumericError("gain is not finite");
}

Action LinearFeedbackPolicy::act(const State& s) const {
  if (s.size() != gain_.cols()) {
    throw DimensionError("policy input has " + std::to_string(s.size()) + " entries, expected " +
                         std::to_string(gain_.cols()));
  }
  return action_box_.clamp(-gain_ * s);
}

RiccatiSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                           double tolerance, std::size_t max_iterations) {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B.cols() ||
      R.cols() != B.cols()) {
    throw DimensionError("inconsistent Riccati matrix shapes");
  }
  RiccatiSolution sol;
  Matrix P = Q;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    const Matrix BtP = B.transpose() * P;
    const Matrix S = R + BtP * B;
    const Matrix K = S.ldlt().solve(BtP * A);
    Matrix next = Q + A.transpose() * P * A - A.transpose() * P * B * K;
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite()) {
      throw NumericError("Riccati iteration produced non-finite values after " + std::to_string(it) +
                         " iterations (is (A, B) stabilizable?)");
    }
    const double change = (next - P).cwiseAbs().maxCoeff();
    const double size = std::max(1.0, next.cwiseAbs().maxCoeff());
    P = std::move(next);
    if (change <= tolerance * size) {
      sol.iterations = it;
      break;
    }
  }
  if (sol.iterations == 0) {
    throw NumericError("Riccati iteration did not converge in " + std::to_string(max_iterations) +
                       " iterations (is (A, B) stabilizable?)");
  }
  sol.K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
  sol.P = std::move(P);
  const Matrix closed = A - B * sol.K;
  const double radius = closed.eigenvalues().cwiseAbs().maxCoeff();
  if (!(radius < 1.0)) {
    throw NumericError("LQR closed loop is not stable (spectral radius " + std::to_string(radius) + ")");
  }
  return sol;
}

std::shared_ptr<LinearFeedbackPolicy> make_lqr_policy(const envsim::EnvModel& env, const Matrix& Q,
                                                      const Matrix& R) {
  const auto& lin = env.linear_dynamics();
  if (!lin) throw ConfigError("LQR needs an environment with linear dynamics: " + env.name());
  const auto sol = solve_dare(lin->A, lin->B, Q, R);
  return std::make_shared<LinearFeedbackPolicy>(sol.K, env.action_box(), "lqr-" + env.name());
}

json to_json(const DenseNet& net) {
  json layers = json::array();
  for (const auto& layer : net.layers()) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      rows.push_back(to_std(layer.weight.row(i).transpose()));
    }
    layers.push_back({{"in", layer.weight.cols()},
                      {"out", layer.weight.rows()},
                      {"activation", std::string(to_string(layer.activation))},
                      {"weight", rows},
                      {"bias", to_std(layer.bias)}});
  }
  return {{"layers", layers}};
}

DenseNet dense_net_from_json(const json& j) {
  try {
    std::vector<DenseLayer> layers;
    for (const auto& jl : j.at("layers")) {
      const auto in = jl.at("in").get<Eigen::Index>();
      const auto out = jl.at("out").get<Eigen::Index>();
      const auto rows = jl.at("weight").get<std::vector<std::vector<double>>>();
      if (static_cast<Eigen::Index>(rows.size()) != out) throw DimensionError("weight row count mismatch");
      DenseLayer layer;
      layer.weight.resize(out, in);
      for (Eigen::Index i = 0; i < out; ++i) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != in) {
          throw DimensionError("weight column count mismatch");
        }
        for (Eigen::Index k = 0; k < in; ++k) layer.weight(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      }
      layer.bias = from_std(jl.at("bias").get<std::vector<double>>());
      layer.activation = parse_activation(jl.at("activation").get<std::string>());
      layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed network checkpoint: ") + e.what());
  }
}

namespace {

json box_to_json(const Box& b) { return {{"lower", to_std(b.lower())}, {"upper", to_std(b.upper())}}; }

Box box_from_json(const json& j) {
  return Box(from_std(j.at("lower").get<std::vector<double>>()),
             from_std(j.at("upper").get<std::vector<double>>()));
}

}  // namespace

json policy_to_json(const BlackBoxPolicy& policy) {
  if (const auto* p = dynamic_cast<const NeuralPolicy*>(&policy)) {
    return {{"format_version", kCheckpointVersion},
            {"type", "neural"},
            {"name", p->name()},
            {"action_box", box_to_json(p->action_box())},
            {"input_scale", to_std(p->input_scale())},
            {"actor", to_json(p->actor())}};
  }
  if (const auto* p = dynamic_cast<const LinearFeedbackPolicy*>(&policy)) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < p->gain().rows(); ++i) rows.push_back(to_std(p->gain().row(i).transpose()));
    return {{"format_version", kCheckpointVersion},
            {"type", "linear"},
            {"name", p->name()},
            {"action_box", box_to_json(p->action_box())},
            {"gain", rows}};
  }
  throw ConfigError("policy '" + policy.name() + "' has no checkpoint format");
}

PolicyPtr policy_from_json(const json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw ConfigError("unsupported checkpoint format_version " + std::to_string(version));
    }
    const auto type = j.at("type").get<std::string>();
    const auto name = j.value("name", type);
    if (type == "neural") {
      return std::make_shared<NeuralPolicy>(dense_net_from_json(j.at("actor")),
                                            box_from_json(j.at("action_box")),
                                            from_std(j.at("input_scale").get<std::vector<double>>()), name);
    }
    if (type == "linear") {
      const auto rows = j.at("gain").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw ConfigError("empty gain matrix");
      Matrix K(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw DimensionError("ragged gain matrix");
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
          K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
      }
      return std::make_shared<LinearFeedbackPolicy>(K, box_from_json(j.at("action_box")), name);
    }
    throw ConfigError("unknown policy type '" + type + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed policy checkpoint: ") + e.what());
  }
}

void save_policy(const BlackBoxPolicy& policy, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << policy_to_json(policy).dump(1) << '\n';
}

PolicyPtr load_policy(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read policy checkpoint " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("policy checkpoint " + file.string() + " is not valid JSON: " + e.what());
  }
  return policy_from_json(j);
}

}  // namespace aegis::neuralctl
