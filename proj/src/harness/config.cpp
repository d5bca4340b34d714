#include "aegis/harness/config.hpp"

#include <fstream>
#include <set>

#include "aegis/core/errors.hpp"

namespace aegis::harness {

using nlohmann::json;

namespace {

// Reads known keys and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where_ + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + where_ + key + "': " + e.what());
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json detector_json(const detector::DetectorConfig& d) {
  return {{"kind", std::string(detector::to_string(d.kind))},
          {"n_trees", d.forest.n_trees},
          {"max_depth", d.forest.max_depth},
          {"min_samples_leaf", d.forest.min_samples_leaf},
          {"max_features", d.forest.max_features},
          {"balanced_bootstrap", d.forest.balanced_bootstrap},
          {"hidden", d.dense.hidden},
          {"learning_rate", d.dense.learning_rate},
          {"epochs", d.dense.epochs},
          {"batch_size", d.dense.batch_size},
          {"class_weighting", d.dense.class_weighting},
          {"test_fraction", d.test_fraction},
          {"max_rows", d.max_rows},
          {"minority_floor", d.minority_floor}};
}

void read_detector(const json& j, detector::DetectorConfig& d) {
  Reader r(j, "detector.");
  std::string kind(detector::to_string(d.kind));
  r.get("kind", kind);
  d.kind = detector::parse_kind(kind);
  r.get("n_trees", d.forest.n_trees);
  r.get("max_depth", d.forest.max_depth);
  r.get("min_samples_leaf", d.forest.min_samples_leaf);
  r.get("max_features", d.forest.max_features);
  r.get("balanced_bootstrap", d.forest.balanced_bootstrap);
  r.get("hidden", d.dense.hidden);
  r.get("learning_rate", d.dense.learning_rate);
  r.get("epochs", d.dense.epochs);
  r.get("batch_size", d.dense.batch_size);
  r.get("class_weighting", d.dense.class_weighting);
  r.get("test_fraction", d.test_fraction);
  r.get("max_rows", d.max_rows);
  r.get("minority_floor", d.minority_floor);
}

void require_file(const std::string& path, const char* what) {
  if (!path.empty() && !std::filesystem::is_regular_file(path)) {
    throw ConfigError(std::string(what) + " not found: " + path);
  }
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  return {{"benchmark", c.benchmark},
          {"benchmark_file", c.benchmark_file},
          {"spec_file", c.spec_file},
          {"victims", c.victims},
          {"seed", c.seed},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir},
          {"workers", c.workers},
          {"victim",
           {{"kind", c.victim.kind},
            {"count", c.victim.count},
            {"steps", c.victim.steps},
            {"tau", c.victim.tau},
            {"termination_penalty", c.victim.termination_penalty},
            {"start_scale", c.victim.start_scale},
            {"hidden", c.victim.hidden}}},
          {"epsilon",
           {{"mode", c.epsilon.mode},
            {"value", c.epsilon.value},
            {"start", c.epsilon.start},
            {"step", c.epsilon.step},
            {"n_sims", c.epsilon.n_sims},
            {"max", c.epsilon.max}}},
          {"attack",
           {{"n_init", c.attack.n_init},
            {"n_iter", c.attack.n_iter},
            {"candidates", c.attack.candidates},
            {"xi", c.attack.xi},
            {"stride", c.attack.stride},
            {"record_stride", c.attack.record_stride}}},
          {"features",
           {{"fraction", c.features.fraction},
            {"n_trees", c.features.n_trees},
            {"max_depth", c.features.max_depth},
            {"max_rows", c.features.max_rows}}},
          {"detector", detector_json(c.detector)},
          {"aux",
           {{"steps", c.aux.steps},
            {"tau", c.aux.tau},
            {"p_adv", c.aux.p_adv},
            {"episode_length", c.aux.episode_length},
            {"lambda", c.aux.lambda},
            {"termination_penalty", c.aux.termination_penalty},
            {"rollout_min_safety", c.aux.rollout_min_safety},
            {"observation_scale", c.aux.observation_scale}}},
          {"eval",
           {{"defense_starts", c.eval.defense_starts},
            {"perf_runs", c.eval.perf_runs},
            {"improvement", c.eval.improvement},
            {"sweep", c.eval.sweep}}}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "");
  r.get("benchmark", c.benchmark);
  r.get("benchmark_file", c.benchmark_file);
  r.get("spec_file", c.spec_file);
  r.get("victims", c.victims);
  r.get("seed", c.seed);
  r.get("seeds", c.seeds);
  r.get("output_dir", c.output_dir);
  r.get("workers", c.workers);
  if (const auto* v = r.child("victim")) {
    Reader s(*v, "victim.");
    s.get("kind", c.victim.kind);
    s.get("count", c.victim.count);
    s.get("steps", c.victim.steps);
    s.get("tau", c.victim.tau);
    s.get("termination_penalty", c.victim.termination_penalty);
    s.get("start_scale", c.victim.start_scale);
    s.get("hidden", c.victim.hidden);
  }
  if (const auto* v = r.child("epsilon")) {
    Reader s(*v, "epsilon.");
    s.get("mode", c.epsilon.mode);
    s.get("value", c.epsilon.value);
    s.get("start", c.epsilon.start);
    s.get("step", c.epsilon.step);
    s.get("n_sims", c.epsilon.n_sims);
    s.get("max", c.epsilon.max);
  }
  if (const auto* v = r.child("attack")) {
    Reader s(*v, "attack.");
    s.get("n_init", c.attack.n_init);
    s.get("n_iter", c.attack.n_iter);
    s.get("candidates", c.attack.candidates);
    s.get("xi", c.attack.xi);
    s.get("stride", c.attack.stride);
    s.get("record_stride", c.attack.record_stride);
  }
  if (const auto* v = r.child("features")) {
    Reader s(*v, "features.");
    s.get("fraction", c.features.fraction);
    s.get("n_trees", c.features.n_trees);
    s.get("max_depth", c.features.max_depth);
    s.get("max_rows", c.features.max_rows);
  }
  if (const auto* v = r.child("detector")) read_detector(*v, c.detector);
  if (const auto* v = r.child("aux")) {
    Reader s(*v, "aux.");
    s.get("steps", c.aux.steps);
    s.get("tau", c.aux.tau);
    s.get("p_adv", c.aux.p_adv);
    s.get("episode_length", c.aux.episode_length);
    s.get("lambda", c.aux.lambda);
    s.get("termination_penalty", c.aux.termination_penalty);
    s.get("rollout_min_safety", c.aux.rollout_min_safety);
    s.get("observation_scale", c.aux.observation_scale);
  }
  if (const auto* v = r.child("eval")) {
    Reader s(*v, "eval.");
    s.get("defense_starts", c.eval.defense_starts);
    s.get("perf_runs", c.eval.perf_runs);
    s.get("improvement", c.eval.improvement);
    s.get("sweep", c.eval.sweep);
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  json j = to_json(cfg);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + o);
    std::string pointer = "/" + o.substr(0, eq);
    for (auto& ch : pointer) {
      if (ch == '.') ch = '/';
    }
    const std::string text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr)) throw ConfigError("unknown config key '" + o.substr(0, eq) + "'");
    j[ptr] = value;
  }
  return config_from_json(j);
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  require_file(benchmark_file, "benchmark file");
  require_file(spec_file, "spec file");
  for (const auto& v : victims) require_file(v, "victim checkpoint");
  if (victims.empty() && victim.count == 0) throw ConfigError("victim.count must be positive");
  if (victim.kind != "auto" && victim.kind != "ddpg" && victim.kind != "lqr") {
    throw ConfigError("victim.kind must be auto, ddpg or lqr");
  }
  if (!(victim.start_scale >= 0.0 && victim.start_scale <= 1.0)) throw ConfigError("victim.start_scale must lie in [0, 1]");
  if (epsilon.mode != "init_box" && epsilon.mode != "auto" && epsilon.mode != "fixed") {
    throw ConfigError("epsilon.mode must be init_box, auto or fixed");
  }
  if (epsilon.mode == "fixed" && !(epsilon.value >= 0.0)) throw ConfigError("epsilon.value must be non-negative");
  if (epsilon.mode == "auto" && (!(epsilon.step > 0.0) || epsilon.n_sims == 0)) {
    throw ConfigError("epsilon search needs a positive step and simulation count");
  }
  acquisition().validate();
  if (!(features.fraction > 0.0 && features.fraction <= 1.0)) throw ConfigError("features.fraction must lie in (0, 1]");
  if (features.n_trees == 0 || features.max_depth == 0) throw ConfigError("feature forest needs trees and depth");
  detector.validate();
  if (aux.observation_scale != "none" && aux.observation_scale != "safety") {
    throw ConfigError("aux.observation_scale must be none or safety");
  }
  if (!(aux.p_adv >= 0.0 && aux.p_adv <= 1.0)) throw ConfigError("aux.p_adv must lie in [0, 1]");
  if (eval.defense_starts == 0 || eval.perf_runs == 0) throw ConfigError("eval counts must be positive");
  victim_trainer().validate();
  aux_trainer().validate();
}

envsim::Benchmark ExperimentConfig::load_benchmark() const {
  if (!benchmark_file.empty()) return envsim::load_benchmark(benchmark_file);
  return envsim::make_benchmark(benchmark);
}

specdsl::SafetySpec ExperimentConfig::load_spec(const envsim::Benchmark& bench) const {
  std::string text = bench.spec_text;
  if (!spec_file.empty()) {
    std::ifstream in(spec_file);
    if (!in) throw ConfigError("spec file not found: " + spec_file);
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto spec = specdsl::parse_spec(text);
  if (spec.required_dim() > bench.env.state_dim()) throw DimensionError("spec reads beyond the plant's state");
  return spec;
}

gpopt::AcquisitionConfig ExperimentConfig::acquisition() const {
  gpopt::AcquisitionConfig a;
  a.xi = attack.xi;
  a.n_init = attack.n_init;
  a.n_iter = attack.n_iter;
  a.candidates_per_step = attack.candidates;
  return a;
}

neuralctl::TrainerConfig ExperimentConfig::victim_trainer() const {
  neuralctl::TrainerConfig t;
  t.total_steps = victim.steps;
  t.tau = victim.tau;
  t.hidden = victim.hidden;
  return t;
}

neuralctl::TrainerConfig ExperimentConfig::aux_trainer() const {
  neuralctl::TrainerConfig t;
  t.total_steps = aux.steps;
  t.tau = aux.tau;
  return t;
}

}  // namespace aegis::harness
