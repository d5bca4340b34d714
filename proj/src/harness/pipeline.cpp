#include "aegis/harness/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "aegis/core/hash.hpp"
#include "aegis/core/parallel.hpp"
#include "aegis/neuralctl/policies.hpp"

namespace aegis::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("missing artifact " + file.string() + " (run the stage that produces it first)");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json traj_json(const envsim::Trajectory& t) {
  json states = json::array(), actions = json::array();
  for (const auto& s : t.states) states.push_back(vec_json(s));
  for (const auto& a : t.actions) actions.push_back(vec_json(a));
  return {{"states", states}, {"actions", actions}, {"perf_return", t.perf_return}};
}

envsim::Trajectory json_traj(const json& j) {
  envsim::Trajectory t;
  for (const auto& s : j.at("states")) t.states.push_back(json_vec(s));
  for (const auto& a : j.at("actions")) t.actions.push_back(json_vec(a));
  t.perf_return = j.at("perf_return").get<double>();
  return t;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> json_opt(const json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"victim",    "attack1", "features", "attack2", "detector", "aux",
                                              "defense",   "improvement", "sweep", "perf", "transfer", "report"};
  return names;
}

Pipeline::Pipeline(ExperimentConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      paths_{fs::path(cfg_.output_dir)},
      bench_(cfg_.load_benchmark()),
      spec_(cfg_.load_spec(bench_)) {
  fs::create_directories(paths_.dir);
  write_text(paths_.file("config.json"), to_json(cfg_).dump(2) + "\n");
  auto m = manifest("config");
  m.output(paths_.file("config.json"));
  if (!cfg_.spec_file.empty()) m.input(cfg_.spec_file);
  if (!cfg_.benchmark_file.empty()) m.input(cfg_.benchmark_file);
  finish(m);
}

std::uint64_t Pipeline::stage_seed(const std::string& stage) const { return derive_seed(cfg_.seed, stage); }

void Pipeline::run(const std::string& stage) {
  const auto t0 = std::chrono::steady_clock::now();
  std::clog << "[" << stage << "] start" << std::endl;
  try {
    if (stage == "victim") train_victims();
    else if (stage == "attack1") attack(1);
    else if (stage == "features") select_features();
    else if (stage == "attack2") attack(2);
    else if (stage == "detector") train_detector();
    else if (stage == "aux") train_aux();
    else if (stage == "defense") evaluate_defense();
    else if (stage == "improvement") evaluate_improvement();
    else if (stage == "sweep") sweep();
    else if (stage == "perf") perf();
    else if (stage == "transfer") transfer();
    else if (stage == "report") report();
    else throw ConfigError("unknown stage '" + stage + "'");
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::clog << "[" << stage << "] done in " << secs << " s" << std::endl;
}

void Pipeline::run_all() {
  for (const auto& s : stage_names()) {
    if (s == "victim" && !cfg_.victims.empty()) continue;
    if (s == "improvement" && !cfg_.eval.improvement) continue;
    if (s == "sweep" && !cfg_.eval.sweep) continue;
    if (s == "transfer" && victims().size() < 2) continue;
    run(s);
  }
}

Manifest Pipeline::manifest(const std::string& stage) const { return Manifest(paths_.dir, stage, stage_seed(stage)); }

void Pipeline::finish(const Manifest& m) {
  m.write();
  // root manifest: one entry per stage manifest
  json entries = json::array();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(paths_.dir / "manifests")) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    entries.push_back({{"path", fs::relative(f, paths_.dir).generic_string()}, {"sha256", sha256_file(f)}});
  }
  write_text(paths_.file("manifest.json"), json{{"root_seed", cfg_.seed}, {"stages", entries}}.dump(2) + "\n");
}

void Pipeline::write_text(const fs::path& file, const std::string& text) const {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << text;
  if (!out) throw ConfigError("write failed: " + file.string());
}

// ---------------------------------------------------------------- victims

void Pipeline::train_victims() {
  auto m = manifest("victim");
  if (!cfg_.victims.empty()) throw ConfigError("victims are given in the config; nothing to train");
  std::string kind = cfg_.victim.kind;
  if (kind == "auto") kind = bench_.env.linear_dynamics() && bench_.lqr_q && bench_.lqr_r ? "lqr" : "ddpg";
  m.param("kind", kind);
  m.param("count", cfg_.victim.count);
  std::ostringstream csv;
  csv << "victim,kind,nominal_safe_rate\n";
  std::vector<PolicyPtr> out;
  for (std::size_t k = 0; k < cfg_.victim.count; ++k) {
    PolicyPtr pi;
    if (kind == "lqr") {
      if (!bench_.lqr_q || !bench_.lqr_r) throw ConfigError("benchmark has no LQR weights");
      if (k > 0) throw ConfigError("LQR victims are deterministic; victim.count must be 1");
      pi = neuralctl::make_lqr_policy(bench_.env, Matrix(bench_.lqr_q->asDiagonal()), Matrix(bench_.lqr_r->asDiagonal()));
    } else {
      neuralctl::EnvTask::Options o;
      const auto& spec = spec_;
      o.terminal = [&spec](const State& s) { return !spec.holds(s); };
      o.termination_penalty = cfg_.victim.termination_penalty;
      if (cfg_.victim.start_scale > 0.0) {
        const Vector mid = (bench_.safety_box.lower() + bench_.safety_box.upper()) / 2.0;
        const Vector half = (bench_.safety_box.upper() - bench_.safety_box.lower()) / 2.0 * cfg_.victim.start_scale;
        o.start_box = Box(mid - half, mid + half);
      }
      neuralctl::EnvTask task(bench_.env, o);
      pi = neuralctl::train_ddpg(task, cfg_.victim_trainer(), derive_seed(stage_seed("victim"), k),
                                 "victim_" + std::to_string(k))
               .policy;
    }
    std::vector<char> safe(1000);
    parallel_for(
        safe.size(),
        [&](std::size_t i) {
          const auto s0 = envsim::sample_initial(bench_.env, derive_seed(stage_seed("nominal"), i));
          safe[i] = spec_.reward(envsim::rollout(bench_.env, *pi, s0)) > 0.0;
        },
        cfg_.workers);
    const double rate = static_cast<double>(std::count(safe.begin(), safe.end(), 1)) / 1000.0;
    csv << k << ',' << kind << ',' << format_double(rate) << '\n';
    fs::create_directories(paths_.victim(k).parent_path());
    neuralctl::save_policy(*pi, paths_.victim(k));
    m.output(paths_.victim(k));
    out.push_back(pi);
  }
  write_text(paths_.file("victims.csv"), csv.str());
  m.output(paths_.file("victims.csv"));
  victims_ = std::move(out);
  finish(m);
}

const std::vector<PolicyPtr>& Pipeline::victims() {
  if (!victims_) {
    std::vector<PolicyPtr> v;
    if (!cfg_.victims.empty()) {
      for (const auto& p : cfg_.victims) v.push_back(neuralctl::load_policy(p));
    } else {
      for (std::size_t k = 0; k < cfg_.victim.count; ++k) {
        if (!fs::exists(paths_.victim(k))) {
          throw ConfigError("missing artifact " + paths_.victim(k).string() + " (run train-victim first)");
        }
        v.push_back(neuralctl::load_policy(paths_.victim(k)));
      }
    }
    for (const auto& p : v) {
      if (p->action_dim() != bench_.env.action_dim()) throw DimensionError("victim action dimension");
    }
    victims_ = std::move(v);
  }
  return *victims_;
}

// ---------------------------------------------------------------- attacks

attack::AttackOptions Pipeline::attack_options(std::size_t record_stride) const {
  attack::AttackOptions o;
  o.stride = cfg_.attack.stride ? cfg_.attack.stride : bench_.attack_stride;
  o.record_state_stride = record_stride;
  o.workers = cfg_.workers;
  return o;
}

double Pipeline::epsilon_value() {
  if (!epsilon_) epsilon_ = json_opt(read_json(paths_.file("epsilon.json")).at("epsilon")).value_or(0.0);
  return *epsilon_;
}

std::vector<std::size_t> Pipeline::filter(int stage) {
  if (stage == 1) return attack::all_dims(bench_.env.state_dim());
  if (!selected_) selected_ = read_json(paths_.file("features.json")).at("selected").get<std::vector<std::size_t>>();
  return *selected_;
}

attack::PerturbationBox Pipeline::box(int stage) {
  auto f = filter(stage);
  if (cfg_.epsilon.mode == "init_box") return attack::PerturbationBox::from_init_box(bench_.env.init_box(), bench_.safety_box, f);
  auto b = attack::PerturbationBox::uniform(epsilon_value(), f);
  b.clip = attack::clip_region(bench_.safety_box);
  return b;
}

const std::vector<envsim::Trajectory>& Pipeline::bases() {
  if (!bases_) {
    std::vector<envsim::Trajectory> out;
    const auto doc = read_json(paths_.file("bases.json"));
    for (const auto& t : doc.at("trajectories")) out.push_back(json_traj(t));
    bases_ = std::move(out);
  }
  return *bases_;
}

const std::vector<attack::AttackRecord>& Pipeline::records(int stage) {
  auto& slot = records_[stage - 1];
  if (!slot) {
    std::ifstream in(paths_.records(stage));
    if (!in) throw ConfigError("missing artifact " + paths_.records(stage).string());
    slot = attack::read_records_jsonl(in);
  }
  return *slot;
}

std::vector<State> Pipeline::adversarial_set() {
  std::vector<State> out;
  for (int stage : {1, 2}) {
    for (const auto& r : records(stage)) {
      if (r.unsafe) out.push_back(r.perturbed);
    }
  }
  return out;
}

void Pipeline::attack(int stage) {
  const std::string name = "attack" + std::to_string(stage);
  auto m = manifest(name);
  const auto& pi = victims().front();
  for (const auto& v : cfg_.victims) m.input(v);
  if (cfg_.victims.empty()) m.input(paths_.victim(0));

  if (stage == 1) {
    // epsilon and base trajectories are fixed here for every later stage
    std::optional<double> eps;
    if (cfg_.epsilon.mode == "fixed") eps = cfg_.epsilon.value;
    if (cfg_.epsilon.mode == "auto") {
      attack::EpsilonSearch search;
      search.start = cfg_.epsilon.start;
      search.step = cfg_.epsilon.step;
      search.n_sims = cfg_.epsilon.n_sims;
      search.max_epsilon = cfg_.epsilon.max;
      search.clip = attack::clip_region(bench_.safety_box);
      eps = attack::select_epsilon(bench_.env, victims(), spec_, search, stage_seed("epsilon"));
    }
    write_text(paths_.file("epsilon.json"), json{{"mode", cfg_.epsilon.mode}, {"epsilon", opt_json(eps)}}.dump(2) + "\n");
    epsilon_ = eps.value_or(0.0);
    m.output(paths_.file("epsilon.json"));

    json trajs = json::array();
    std::vector<envsim::Trajectory> bs;
    for (auto s : cfg_.seeds) {
      std::optional<envsim::Trajectory> t;
      for (std::uint64_t attempt = 0; attempt < 100 && !t; ++attempt) {
        const auto s0 = envsim::sample_initial(bench_.env, derive_seed(derive_seed(stage_seed("bases"), s), attempt));
        auto traj = envsim::rollout(bench_.env, *pi, s0);
        if (spec_.reward(traj) > 0.0) t = std::move(traj);
      }
      if (!t) throw ConfigError("victim has no nominally safe trajectory for seed " + std::to_string(s));
      trajs.push_back(traj_json(*t));
      bs.push_back(std::move(*t));
    }
    write_text(paths_.file("bases.json"), json{{"seeds", cfg_.seeds}, {"trajectories", trajs}}.dump() + "\n");
    bases_ = std::move(bs);
    m.output(paths_.file("bases.json"));
  } else {
    m.input(paths_.file("epsilon.json"));
    m.input(paths_.file("bases.json"));
    m.input(paths_.file("features.json"));
  }

  const auto b = box(stage);
  const auto acq = cfg_.acquisition();
  const auto opts = attack_options(cfg_.attack.record_stride);
  auto rand_opts = opts;
  rand_opts.record_state_stride = 0;
  std::vector<attack::AttackResult> parts;
  std::vector<double> bo_rates, rand_rates;
  std::ostringstream csv;
  csv << "seed,rollouts,bo_unsafe,bo_rate,random_unsafe,random_rate\n";
  for (std::size_t i = 0; i < cfg_.seeds.size(); ++i) {
    const auto s = cfg_.seeds[i];
    auto bo = attack::bo_attack(bench_.env, *pi, spec_, b, bases()[i], acq, derive_seed(stage_seed(name), s), opts, i);
    const auto rd = attack::random_attack(bench_.env, *pi, spec_, b, bases()[i], bo.records.size(),
                                          derive_seed(stage_seed("random" + std::to_string(stage)), s), rand_opts, i);
    csv << s << ',' << bo.records.size() << ',' << bo.unsafe_count << ',' << format_double(bo.success_rate) << ','
        << rd.unsafe_count << ',' << format_double(rd.success_rate) << '\n';
    std::clog << "[" << name << "] seed " << s << ": bo " << bo.success_rate << " random " << rd.success_rate << std::endl;
    bo_rates.push_back(bo.success_rate);
    rand_rates.push_back(rd.success_rate);
    parts.push_back(std::move(bo));
  }
  csv << "mean,,," << format_double(mean_of(bo_rates)) << ",," << format_double(mean_of(rand_rates)) << '\n';
  auto merged = attack::merge(std::move(parts));
  {
    std::ofstream out(paths_.records(stage), std::ios::binary);
    attack::write_records_jsonl(out, merged.records);
  }
  records_[stage - 1] = std::move(merged.records);
  write_text(paths_.file(name + ".csv"), csv.str());
  write_text(paths_.file(name + ".json"), json{{"filter", b.filter},
                                               {"epsilon", cfg_.epsilon.mode == "init_box" ? json(nullptr) : json(epsilon_value())},
                                               {"bo_rate", mean_of(bo_rates)},
                                               {"random_rate", mean_of(rand_rates)},
                                               {"bo_rates", bo_rates},
                                               {"random_rates", rand_rates}}
                                              .dump(2) + "\n");
  m.param("filter", b.filter);
  m.param("budget", acq.budget());
  m.output(paths_.records(stage));
  m.output(paths_.file(name + ".csv"));
  m.output(paths_.file(name + ".json"));
  finish(m);
}

void Pipeline::select_features() {
  auto m = manifest("features");
  m.input(paths_.records(1));
  m.input(paths_.file("bases.json"));
  auto data = detector::build_dataset(records(1), bases());
  data = detector::stratified_cap(data, cfg_.features.max_rows, derive_seed(stage_seed("features"), "cap"),
                                  cfg_.detector.minority_floor);
  const auto rf = forest::rf_train(data, cfg_.features.n_trees, cfg_.features.max_depth, stage_seed("features"));
  const auto selected = forest::select_top_features(rf, cfg_.features.fraction);
  {
    std::ofstream out(paths_.file("importance.csv"), std::ios::binary);
    forest::write_importance_csv(out, rf, data);
  }
  write_text(paths_.file("features.json"), json{{"fraction", cfg_.features.fraction},
                                                {"selected", selected},
                                                {"importances", vec_json(rf.importances())}}
                                               .dump(2) + "\n");
  selected_ = selected;
  m.param("rows", data.size());
  m.output(paths_.file("importance.csv"));
  m.output(paths_.file("features.json"));
  finish(m);
}

// ---------------------------------------------------------------- defense

void Pipeline::train_detector() {
  auto m = manifest("detector");
  m.input(paths_.records(1));
  m.input(paths_.records(2));
  m.input(paths_.file("bases.json"));
  auto recs = records(1);
  recs.insert(recs.end(), records(2).begin(), records(2).end());
  const auto data = detector::build_dataset(recs, bases());
  recs.clear();
  const auto seed = stage_seed("detector");
  const auto rep = detector::train_detector(data, cfg_.detector, seed);
  // the C range is taken over the rows the detector was trained and tested on
  const auto used = detector::stratified_cap(data, cfg_.detector.max_rows, derive_seed(seed, "cap"),
                                             cfg_.detector.minority_floor);
  const auto range = detector::c_range(rep.detector, used);
  detector::save_detector(rep.detector, paths_.file("detector.json"),
                          {{"training_data_sha256", detector::dataset_hash(data)},
                           {"hyperparameters", cfg_.detector.to_json()},
                           {"seed", seed}});
  std::ostringstream csv;
  csv << "kind,rows,unsafe_rows,n_train,n_test,train_accuracy,held_out_accuracy,c_low,c_high\n"
      << detector::to_string(rep.detector.kind()) << ',' << data.size() << ',' << data.count(forest::kUnsafe) << ','
      << rep.n_train << ',' << rep.n_test << ',' << format_double(rep.train_accuracy) << ','
      << format_double(rep.held_out_accuracy) << ',' << format_double(range.l) << ',' << format_double(range.h) << '\n';
  write_text(paths_.file("detector.csv"), csv.str());
  write_text(paths_.file("detector_metrics.json"), json{{"held_out_accuracy", rep.held_out_accuracy},
                                                        {"train_accuracy", rep.train_accuracy},
                                                        {"c_low", range.l},
                                                        {"c_high", range.h}}
                                                       .dump(2) + "\n");
  detector_ = rep.detector;
  m.output(paths_.file("detector.json"));
  m.output(paths_.file("detector.json.manifest"));
  m.output(paths_.file("detector.csv"));
  m.output(paths_.file("detector_metrics.json"));
  finish(m);
}

const detector::Detector& Pipeline::detector() {
  if (!detector_) detector_ = detector::load_detector(paths_.file("detector.json"));
  return *detector_;
}

void Pipeline::train_aux() {
  auto m = manifest("aux");
  m.input(paths_.file("detector.json"));
  m.input(paths_.records(1));
  m.input(paths_.records(2));
  shield::ShieldTrainOptions o;
  o.p_adv = cfg_.aux.p_adv;
  o.episode_length = cfg_.aux.episode_length;
  o.lambda = cfg_.aux.lambda;
  o.rollout_min_safety = cfg_.aux.rollout_min_safety;
  o.termination_penalty = cfg_.aux.termination_penalty;
  if (cfg_.aux.observation_scale == "safety") {
    o.observation_scale = (bench_.safety_box.upper() - bench_.safety_box.lower()) / 2.0;
  }
  o.fallback_box = box(2);
  const auto adv = adversarial_set();
  m.param("adversarial_states", adv.size());
  shield::ShieldTrainEnv env(bench_.env, spec_, detector(), adv, o);
  PolicyPtr aux = shield::train_aux(env, cfg_.aux_trainer(), stage_seed("aux")).policy;
  neuralctl::save_policy(*aux, paths_.file("aux.json"));
  aux_ = aux;
  m.output(paths_.file("aux.json"));
  finish(m);
}

const PolicyPtr& Pipeline::aux() {
  if (!aux_) aux_ = neuralctl::load_policy(paths_.file("aux.json"));
  return *aux_;
}

std::shared_ptr<shield::ShieldedPolicy> Pipeline::shielded() {
  return std::make_shared<shield::ShieldedPolicy>(detector(), victims().front(), aux());
}

std::vector<State> Pipeline::sample_states(const std::vector<State>& pool, std::size_t n, std::uint64_t seed) const {
  if (pool.size() <= n) return pool;
  // partial Fisher-Yates; the chosen states keep their pool order
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<State> out;
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

void Pipeline::evaluate_defense() {
  auto m = manifest("defense");
  for (const char* f : {"detector.json", "aux.json"}) m.input(paths_.file(f));
  m.input(paths_.records(1));
  m.input(paths_.records(2));
  const auto sp = shielded();
  const auto& pi = victims().front();
  shield::EvalOptions eo;
  eo.workers = cfg_.workers;
  const auto n = cfg_.eval.defense_starts;

  std::ostringstream csv;
  csv << "set,starts,none,shielded,aux_only,interventions,steps\n";
  auto row = [&](const std::string& label, const std::vector<State>& starts) -> std::optional<double> {
    if (starts.empty()) {
      csv << label << ",0,,,,,\n";
      return std::nullopt;
    }
    const auto none = shield::eval_defense(bench_.env, spec_, *pi, starts, eo);
    const auto sh = shield::eval_defense(bench_.env, spec_, *sp, starts, eo);
    const auto ax = shield::eval_defense(bench_.env, spec_, *aux(), starts, eo);
    csv << label << ',' << starts.size() << ',' << format_double(none.rate) << ',' << format_double(sh.rate) << ','
        << format_double(ax.rate) << ',' << sh.interventions << ',' << sh.steps << '\n';
    return sh.rate;
  };

  std::vector<double> per_seed;
  for (std::size_t i = 0; i < cfg_.seeds.size(); ++i) {
    std::vector<State> adv;
    for (int stage : {1, 2}) {
      for (const auto& r : records(stage)) {
        if (r.unsafe && r.traj_id == i) adv.push_back(r.perturbed);
      }
    }
    const auto seed = derive_seed(stage_seed("defense"), cfg_.seeds[i]);
    if (auto rate = row("seed_" + std::to_string(cfg_.seeds[i]), sample_states(adv, n, seed))) per_seed.push_back(*rate);
  }
  const auto pooled = row("adversarial", sample_states(adversarial_set(), n, stage_seed("defense")));
  std::vector<State> all;
  for (const auto& r : records(2)) {
    if (!r.numeric_failure) all.push_back(r.perturbed);
  }
  const auto all_rate = row("all_attack_starts", sample_states(all, n, derive_seed(stage_seed("defense"), "all")));
  write_text(paths_.file("defense.csv"), csv.str());
  write_text(paths_.file("defense.json"),
             json{{"defense_rate", opt_json(pooled)},
                  {"defense_rate_all_starts", opt_json(all_rate)},
                  {"per_seed_mean", per_seed.empty() ? json(nullptr) : json(mean_of(per_seed))}}
                     .dump(2) + "\n");
  m.output(paths_.file("defense.csv"));
  m.output(paths_.file("defense.json"));
  finish(m);
}

void Pipeline::evaluate_improvement() {
  auto m = manifest("improvement");
  for (const char* f : {"detector.json", "aux.json", "bases.json", "features.json"}) m.input(paths_.file(f));
  const auto sp = shielded();
  std::vector<std::uint64_t> seeds;
  // same seeds as the stage-2 attack, so the baseline reproduces it
  for (auto s : cfg_.seeds) seeds.push_back(derive_seed(stage_seed("attack2"), s));
  const auto r = shield::eval_shielded_attack_improvement(bench_.env, spec_, *sp, box(2), bases(), cfg_.acquisition(),
                                                          seeds, attack_options(0));
  std::ostringstream csv;
  csv << "seed,rollouts,baseline_unsafe,shielded_unsafe,improvement\n";
  for (std::size_t i = 0; i < cfg_.seeds.size(); ++i) {
    const auto b = r.baseline_unsafe[i], s = r.shielded_unsafe[i];
    csv << cfg_.seeds[i] << ',' << r.rollouts_per_attack << ',' << b << ',' << s << ','
        << (b ? format_double(1.0 - static_cast<double>(s) / static_cast<double>(b)) : std::string()) << '\n';
  }
  csv << "mean,,,," << csv_cell(r.improvement) << '\n';
  write_text(paths_.file("improvement.csv"), csv.str());
  write_text(paths_.file("improvement.json"), json{{"improvement", opt_json(r.improvement)}}.dump(2) + "\n");
  m.output(paths_.file("improvement.csv"));
  m.output(paths_.file("improvement.json"));
  finish(m);
}

void Pipeline::sweep() {
  auto m = manifest("sweep");
  for (const char* f : {"detector.json", "detector_metrics.json", "aux.json", "bases.json"}) m.input(paths_.file(f));
  const auto metrics = read_json(paths_.file("detector_metrics.json"));
  const auto range = detector::make_c_range(metrics.at("c_low").get<double>(), metrics.at("c_high").get<double>());
  const auto adv = sample_states(adversarial_set(), cfg_.eval.defense_starts, stage_seed("defense"));
  if (adv.empty()) throw ConfigError("empty adversarial set; nothing to sweep");
  shield::SweepOptions so;
  so.perf_runs = cfg_.eval.perf_runs;
  so.seed = stage_seed("sweep");
  so.eval.workers = cfg_.workers;
  const auto rows = shield::intervention_sweep(bench_.env, spec_, *shielded(), range, adv, bases(), box(2), so);
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  write_text(paths_.file("sweep.csv"), csv.str());
  m.output(paths_.file("sweep.csv"));
  finish(m);
}

void Pipeline::perf() {
  auto m = manifest("perf");
  for (const char* f : {"detector.json", "aux.json", "bases.json"}) m.input(paths_.file(f));
  shield::EvalOptions eo;
  eo.workers = cfg_.workers;
  const auto r = perf_report(bench_.env, *victims().front(), *shielded(), bases(), box(2), cfg_.eval.perf_runs,
                             stage_seed("perf"), eo);
  std::ostringstream csv;
  write_perf_csv(csv, r);
  write_text(paths_.file("perf.csv"), csv.str());
  m.output(paths_.file("perf.csv"));
  finish(m);
}

void Pipeline::transfer() {
  auto m = manifest("transfer");
  const auto& vs = victims();
  if (vs.size() < 2) throw ConfigError("transferability needs at least two victims");
  m.input(paths_.records(2));
  const auto b = box(2);
  std::vector<std::vector<State>> sets;
  std::vector<State> first;
  for (const auto& r : records(2)) {
    if (r.unsafe) first.push_back(r.perturbed);
  }
  sets.push_back(std::move(first));
  for (std::size_t k = 1; k < vs.size(); ++k) {
    // victim k is attacked on its own trajectories from the same starts
    std::vector<State> set;
    for (std::size_t i = 0; i < cfg_.seeds.size(); ++i) {
      const auto base = envsim::rollout(bench_.env, *vs[k], bases()[i].states.front());
      if (spec_.reward(base) <= 0.0) continue;
      const auto r = attack::bo_attack(bench_.env, *vs[k], spec_, b, base, cfg_.acquisition(),
                                       derive_seed(derive_seed(stage_seed("transfer"), k), cfg_.seeds[i]),
                                       attack_options(0), i);
      for (auto& s : r.adversarial_set()) set.push_back(std::move(s));
    }
    sets.push_back(std::move(set));
  }
  shield::EvalOptions eo;
  eo.workers = cfg_.workers;
  const auto mat = transferability(sets, vs, bench_.env, spec_, eo);
  auto renamed = mat;
  for (std::size_t k = 0; k < vs.size(); ++k) renamed.names[k] = "victim_" + std::to_string(k);
  std::ostringstream csv;
  write_transfer_csv(csv, renamed);
  write_text(paths_.file("transfer.csv"), csv.str());
  m.output(paths_.file("transfer.csv"));
  finish(m);
}

void Pipeline::report() {
  auto m = manifest("report");
  Table1Row row;
  row.benchmark = bench_.env.name();
  row.state_dim = bench_.env.state_dim();
  row.horizon = bench_.env.horizon();
  const auto a2 = read_json(paths_.file("attack2.json"));
  m.input(paths_.file("attack2.json"));
  row.filter_dim = a2.at("filter").size();
  row.epsilon = json_opt(a2.at("epsilon"));
  row.bo_attack = a2.at("bo_rate").get<double>();
  row.rand_attack = a2.at("random_rate").get<double>();
  if (fs::exists(paths_.file("defense.json"))) {
    const auto d = read_json(paths_.file("defense.json"));
    m.input(paths_.file("defense.json"));
    row.defense_rate = json_opt(d.at("defense_rate"));
    row.defense_rate_all_starts = json_opt(d.at("defense_rate_all_starts"));
  }
  if (fs::exists(paths_.file("improvement.json"))) {
    m.input(paths_.file("improvement.json"));
    row.attack_improvement = json_opt(read_json(paths_.file("improvement.json")).at("improvement"));
  }
  std::ostringstream csv;
  write_table1_csv(csv, {row});
  write_text(paths_.file("table1.csv"), csv.str());
  m.output(paths_.file("table1.csv"));
  finish(m);
}

std::vector<std::string> verify_manifests(const fs::path& run_dir) {
  std::vector<std::string> bad;
  const auto dir = run_dir / "manifests";
  if (!fs::is_directory(dir)) return {dir.string()};
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto j = read_json(e.path());
    for (const char* side : {"inputs", "outputs"}) {
      for (const auto& f : j.at(side)) {
        fs::path p = f.at("path").get<std::string>();
        if (p.is_relative()) p = run_dir / p;
        if (!fs::is_regular_file(p) || sha256_file(p) != f.at("sha256").get<std::string>()) bad.push_back(p.string());
      }
    }
  }
  std::sort(bad.begin(), bad.end());
  return bad;
}

}  // namespace aegis::harness
