#include "aegis/envsim/benchmarks.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aegis/core/errors.hpp"

#ifndef AEGIS_BENCHMARK_DIR
#define AEGIS_BENCHMARK_DIR "benchmarks"
#endif

namespace aegis::envsim {

namespace {

using nlohmann::json;

Vector read_vector(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array");
  return from_std(j.get<std::vector<double>>());
}

Matrix read_matrix(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + ": expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError(what + ": ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

// A box is either {"lower":[...],"upper":[...]} or a list of [lo, hi] pairs.
Box read_box(const json& j, const std::string& what) {
  if (j.is_object()) return Box(read_vector(j.at("lower"), what), read_vector(j.at("upper"), what));
  if (!j.is_array()) throw ConfigError(what + ": expected a box");
  Vector lo(static_cast<Eigen::Index>(j.size()));
  Vector hi(lo.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& pair = j.at(i);
    if (!pair.is_array() || pair.size() != 2) throw ConfigError(what + ": expected [lo, hi] pairs");
    lo[static_cast<Eigen::Index>(i)] = pair.at(0).get<double>();
    hi[static_cast<Eigen::Index>(i)] = pair.at(1).get<double>();
  }
  return Box(lo, hi);
}

}  // namespace

BenchmarkName parse_benchmark_name(std::string_view name) {
  if (name == "pendulum") return BenchmarkName::pendulum;
  if (name == "carplatoon4") return BenchmarkName::carplatoon4;
  if (name == "carplatoon8") return BenchmarkName::carplatoon8;
  if (name == "helicopter") return BenchmarkName::helicopter;
  throw ConfigError("unknown benchmark '" + std::string(name) + "'");
}

std::string_view to_string(BenchmarkName name) {
  switch (name) {
    case BenchmarkName::pendulum: return "pendulum";
    case BenchmarkName::carplatoon4: return "carplatoon4";
    case BenchmarkName::carplatoon8: return "carplatoon8";
    case BenchmarkName::helicopter: return "helicopter";
  }
  return "?";
}

std::filesystem::path default_benchmark_dir() {
  if (const char* env = std::getenv("AEGIS_BENCHMARK_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return AEGIS_BENCHMARK_DIR;
}

Benchmark load_benchmark(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open benchmark file " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }

  try {
    const auto name = doc.at("name").get<std::string>();
    const auto state_dim = doc.at("state_dim").get<std::size_t>();
    const auto action_dim = doc.at("action_dim").get<std::size_t>();
    const auto horizon = doc.at("horizon").get<std::size_t>();
    Box init_box = read_box(doc.at("init_box"), name + ".init_box");
    Box action_box = read_box(doc.at("action_box"), name + ".action_box");
    Box safety_box = read_box(doc.at("safety_box"), name + ".safety_box");
    if (safety_box.dim() != state_dim) throw DimensionError(name + ": safety box dimension mismatch");

    const auto& dyn = doc.at("dynamics");
    const auto type = dyn.at("type").get<std::string>();
    std::optional<EnvModel> env;
    if (type == "pendulum") {
      PendulumParams p;
      p.g = dyn.value("g", p.g);
      p.m = dyn.value("m", p.m);
      p.l = dyn.value("l", p.l);
      p.dt = dyn.value("dt", p.dt);
      if (state_dim != 2 || action_dim != 1) throw DimensionError(name + ": pendulum is 2-state/1-action");
      env.emplace(name, state_dim, action_dim, horizon, pendulum_step(p), quadratic_cost_reward,
                  std::move(init_box), std::move(action_box));
    } else if (type == "linear") {
      LinearDynamics lin{read_matrix(dyn.at("A"), name + ".A"), read_matrix(dyn.at("B"), name + ".B")};
      if (static_cast<std::size_t>(lin.A.rows()) != state_dim ||
          static_cast<std::size_t>(lin.B.cols()) != action_dim) {
        throw DimensionError(name + ": A/B shapes disagree with declared dimensions");
      }
      env.emplace(EnvModel::linear(name, std::move(lin), horizon, quadratic_cost_reward,
                                   std::move(init_box), std::move(action_box)));
    } else {
      throw ConfigError(name + ": unknown dynamics type '" + type + "'");
    }

    std::string spec_text = doc.at("spec").get<std::string>();
    if (spec_text.size() > 5 && spec_text.ends_with(".spec")) {
      std::ifstream spec_in(file.parent_path() / spec_text);
      if (!spec_in) throw ConfigError("cannot open spec file " + (file.parent_path() / spec_text).string());
      std::stringstream ss;
      ss << spec_in.rdbuf();
      spec_text = ss.str();
    }

    Benchmark bench{std::move(*env), std::move(spec_text), std::move(safety_box),
                    doc.value("attack_stride", std::size_t{1}), std::nullopt, std::nullopt, file};
    if (doc.contains("lqr")) {
      bench.lqr_q = read_vector(doc["lqr"].at("q_diag"), name + ".lqr.q_diag");
      bench.lqr_r = read_vector(doc["lqr"].at("r_diag"), name + ".lqr.r_diag");
    }
    return bench;
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

Benchmark make_benchmark(std::string_view name, const std::filesystem::path& dir) {
  return make_benchmark(parse_benchmark_name(name), dir);
}

Benchmark make_benchmark(BenchmarkName name, const std::filesystem::path& dir) {
  return load_benchmark(dir / (std::string(to_string(name)) + ".json"));
}

}  // namespace aegis::envsim
