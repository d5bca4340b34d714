#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aegis/core/errors.hpp"
#include "aegis/core/hash.hpp"
#include "aegis/harness/pipeline.hpp"
#include "aegis/neuralctl/policies.hpp"

using namespace aegis;
using namespace aegis::harness;
namespace fs = std::filesystem;

namespace {

PolicyPtr pd(const envsim::EnvModel& env, double kp, double kd, const std::string& name) {
  return std::make_shared<neuralctl::LinearFeedbackPolicy>(Matrix{{kp, kd}}, env.action_box(), name);
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("aegis_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<State> grid_states(double r, int n) {
  std::vector<State> out;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out.push_back(State{{-r + 2 * r * i / (n - 1), -r + 2 * r * j / (n - 1)}});
    }
  }
  return out;
}

// Pendulum experiment small enough for a unit test, with two fixed PD victims.
ExperimentConfig small_config(const fs::path& dir) {
  const auto bench = envsim::make_benchmark("pendulum");
  ExperimentConfig cfg;
  cfg.benchmark = "pendulum";
  cfg.output_dir = (dir / "run").string();
  cfg.seeds = {0, 1};
  for (auto [k, kp, kd] : {std::tuple{0, 20.0, 2.0}, std::tuple{1, 16.0, 1.5}}) {
    const auto p = dir / ("pd_" + std::to_string(k) + ".json");
    neuralctl::save_policy(*pd(bench.env, kp, kd, "pd"), p);
    cfg.victims.push_back(p.string());
  }
  cfg.attack.n_init = 3;
  cfg.attack.n_iter = 3;
  cfg.attack.candidates = 128;
  cfg.attack.stride = 20;
  cfg.attack.record_stride = 20;
  cfg.features.n_trees = 10;
  cfg.features.max_rows = 3000;
  cfg.detector.forest.n_trees = 10;
  cfg.detector.max_rows = 3000;
  cfg.aux.steps = 1200;
  cfg.eval.defense_starts = 40;
  cfg.eval.perf_runs = 10;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, JsonRoundTrip) {
  ExperimentConfig cfg;
  cfg.benchmark = "carplatoon4";
  cfg.seeds = {7, 8};
  cfg.epsilon.mode = "fixed";
  cfg.epsilon.value = 0.125;
  cfg.attack.n_iter = 11;
  cfg.aux.observation_scale = "safety";
  cfg.eval.improvement = false;
  const auto j = to_json(cfg);
  EXPECT_EQ(to_json(config_from_json(j)), j);
}

TEST(Config, UnknownKeysAreRejected) {
  auto j = to_json(ExperimentConfig{});
  j["attack"]["n_itr"] = 3;
  EXPECT_THROW(config_from_json(j), ConfigError);
  auto k = to_json(ExperimentConfig{});
  k["sed"] = 3;
  EXPECT_THROW(config_from_json(k), ConfigError);
}

TEST(Config, OverridesParseJsonOrFallBackToString) {
  const auto cfg = apply_overrides(ExperimentConfig{}, {"attack.n_iter=5", "epsilon.mode=fixed", "epsilon.value=0.2",
                                                        "seeds=[3,4]", "eval.sweep=false"});
  EXPECT_EQ(cfg.attack.n_iter, 5u);
  EXPECT_EQ(cfg.epsilon.mode, "fixed");
  EXPECT_DOUBLE_EQ(cfg.epsilon.value, 0.2);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_FALSE(cfg.eval.sweep);
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"attack.budget=5"}), ConfigError);
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"attack.n_iter"}), ConfigError);
}

TEST(Config, MissingSpecFileIsNamed) {
  ExperimentConfig cfg;
  cfg.spec_file = "/nonexistent/dir/pendulum.spec";
  try {
    cfg.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/pendulum.spec"), std::string::npos);
  }
}

TEST(Config, InvalidValuesAreRejected) {
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"epsilon.mode=bogus"}).validate(), ConfigError);
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"features.fraction=0"}).validate(), ConfigError);
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"seeds=[]"}).validate(), ConfigError);
}

TEST(Config, ShippedConfigsValidate) {
  for (const char* name : {"pendulum.json", "carplatoon4.json"}) {
    const auto cfg = load_config(fs::path(AEGIS_SOURCE_DIR) / "configs" / name);
    EXPECT_NO_THROW(cfg.validate()) << name;
  }
}

// ---------------------------------------------------------------- reports

TEST(Transfer, DiagonalIsOneAndDuplicatesMatch) {
  const auto bench = envsim::make_benchmark("pendulum");
  const auto spec = specdsl::parse_spec(bench.spec_text);
  const std::vector<PolicyPtr> policies{pd(bench.env, 20, 2, "a"), pd(bench.env, 14, 1, "b"),
                                        pd(bench.env, 20, 2, "a_copy")};
  attack::AttackOptions ao;
  ao.record_state_stride = 0;
  std::vector<std::vector<State>> sets;
  for (const auto& p : policies) {
    std::vector<State> set;
    for (const auto& s : grid_states(0.49, 15)) {
      if (attack::evaluate_start(bench.env, *p, spec, s, ao).unsafe) set.push_back(s);
    }
    ASSERT_FALSE(set.empty());
    sets.push_back(std::move(set));
  }
  const auto m = transferability(sets, policies, bench.env, spec);
  ASSERT_EQ(m.ratio.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m.ratio[i][i].value(), 1.0);
    EXPECT_EQ(m.set_sizes[i], sets[i].size());
    for (std::size_t j = 0; j < 3; ++j) {
      ASSERT_TRUE(m.ratio[i][j]);
      EXPECT_GE(*m.ratio[i][j], 0.0);
      EXPECT_LE(*m.ratio[i][j], 1.0);
    }
    // a policy identical to column 0 transfers identically
    EXPECT_EQ(m.ratio[i][0], m.ratio[i][2]);
  }
}

TEST(Transfer, EmptySetGivesNaRow) {
  const auto bench = envsim::make_benchmark("pendulum");
  const auto spec = specdsl::parse_spec(bench.spec_text);
  const std::vector<PolicyPtr> policies{pd(bench.env, 20, 2, "a"), pd(bench.env, 40, 12, "b")};
  const auto m = transferability({{State{{0.49, 1.0}}}, {}}, policies, bench.env, spec);
  EXPECT_FALSE(m.ratio[1][0]);
  EXPECT_FALSE(m.ratio[1][1]);
  std::ostringstream csv;
  write_transfer_csv(csv, m);
  EXPECT_NE(csv.str().find("b,0,N/A,N/A\n"), std::string::npos);
  EXPECT_THROW(transferability({{}}, {policies[0]}, bench.env, spec), ConfigError);
}

TEST(Perf, IdenticalPoliciesHaveZeroGap) {
  const auto bench = envsim::make_benchmark("pendulum");
  const auto pi = pd(bench.env, 20, 2, "a");
  const std::vector<envsim::Trajectory> bases{envsim::rollout(bench.env, *pi, State{{0.1, 0.0}}),
                                              envsim::rollout(bench.env, *pi, State{{-0.2, 0.1}})};
  const auto box = attack::PerturbationBox::uniform(0.05, attack::all_dims(2));
  const auto r = perf_report(bench.env, *pi, *pi, bases, box, 20, 3);
  EXPECT_EQ(r.relative_gap, 0.0);
  EXPECT_EQ(r.mean_return_orig, r.mean_return_shielded);
  EXPECT_TRUE(r.reliable);
  const double nominal = (bases[0].perf_return + bases[1].perf_return) / 2.0;
  EXPECT_DOUBLE_EQ(r.normalizer, std::abs(nominal));
  EXPECT_DOUBLE_EQ(r.normalized_orig, r.mean_return_orig / std::abs(nominal));
}

TEST(Perf, SingleRunIsFlaggedUnreliable) {
  const auto bench = envsim::make_benchmark("pendulum");
  const auto a = pd(bench.env, 20, 2, "a");
  const auto b = pd(bench.env, 40, 12, "b");
  const std::vector<envsim::Trajectory> bases{envsim::rollout(bench.env, *a, State{{0.1, 0.0}})};
  const auto box = attack::PerturbationBox::uniform(0.05, attack::all_dims(2));
  const auto r = perf_report(bench.env, *a, *b, bases, box, 1, 3);
  EXPECT_FALSE(r.reliable);
  EXPECT_TRUE(std::isnan(r.std_orig));
  EXPECT_DOUBLE_EQ(r.relative_gap, std::abs(r.mean_return_orig - r.mean_return_shielded) / std::abs(r.mean_return_orig));
  EXPECT_THROW(perf_report(bench.env, *a, *b, bases, box, 0, 3), ConfigError);
}

TEST(Csv, GoldenHeadersAndCells) {
  Table1Row row;
  row.benchmark = "pendulum";
  row.state_dim = 2;
  row.filter_dim = 1;
  row.horizon = 200;
  row.rand_attack = 0.5;
  row.bo_attack = 0.25;
  row.defense_rate = 1.0;
  std::ostringstream t;
  write_table1_csv(t, {row});
  EXPECT_EQ(t.str(),
            "benchmark,state_dim,filter_dim,horizon,epsilon,rand_attack,bo_attack,defense_succ_rate,"
            "defense_succ_rate_all_starts,attack_improvement\n"
            "pendulum,2,1,200,init_box,0.5,0.25,1,,\n");

  PerfReport p;
  p.n_runs = 1;
  p.std_orig = p.std_shielded = std::nan("");
  p.reliable = false;
  std::ostringstream pc;
  write_perf_csv(pc, p);
  EXPECT_EQ(pc.str().substr(0, pc.str().find('\n')),
            "n_runs,normalizer,mean_return_orig,mean_return_shielded,std_orig,std_shielded,normalized_orig,"
            "normalized_shielded,relative_gap,reliable");
  EXPECT_NE(pc.str().find(",false\n"), std::string::npos);

  std::ostringstream sc;
  write_sweep_csv(sc, {});
  EXPECT_EQ(sc.str(), "c,defense_rate,mean_perf_return,intervention_count,intervention_fraction,"
                      "rollout_interventions,rollout_intervention_fraction\n");
}

TEST(Manifest, RecordsHashesAndDetectsEdits) {
  const auto dir = fresh_dir("manifest");
  {
    std::ofstream(dir / "a.csv") << "x\n1\n";
  }
  Manifest m(dir, "stage", 42);
  m.param("k", 3);
  m.output(dir / "a.csv");
  const auto path = m.write();
  const auto j = nlohmann::json::parse(slurp(path));
  EXPECT_EQ(j.at("seed"), 42);
  EXPECT_EQ(j.at("outputs")[0].at("path"), "a.csv");
  EXPECT_EQ(j.at("outputs")[0].at("sha256"), sha256_file(dir / "a.csv"));
  EXPECT_TRUE(verify_manifests(dir).empty());
  {
    std::ofstream(dir / "a.csv") << "x\n2\n";
  }
  EXPECT_EQ(verify_manifests(dir), std::vector<std::string>{(dir / "a.csv").string()});
  EXPECT_THROW(m.output(dir / "missing.csv"), ConfigError);
}

// ---------------------------------------------------------------- pipeline

TEST(Pipeline, MissingArtifactIsAStageError) {
  const auto dir = fresh_dir("missing");
  auto cfg = small_config(dir);
  Pipeline p(cfg);
  try {
    p.run("detector");
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "detector");
    EXPECT_NE(std::string(e.what()).find("stage1_records.jsonl"), std::string::npos);
  }
  EXPECT_THROW(p.run("nonsense"), StageError);
}

TEST(Pipeline, SmallRunIsReproducible) {
  const auto dir = fresh_dir("pipeline");
  auto cfg = small_config(dir);
  std::vector<fs::path> runs;
  for (const char* name : {"run_a", "run_b"}) {
    cfg.output_dir = (dir / name).string();
    Pipeline p(cfg);
    p.run_all();
    runs.push_back(cfg.output_dir);
  }
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(runs[0])) {
    if (e.path().extension() != ".csv") continue;
    EXPECT_EQ(slurp(e.path()), slurp(runs[1] / e.path().filename())) << e.path().filename();
    ++compared;
  }
  EXPECT_GE(compared, 10u);
  EXPECT_TRUE(verify_manifests(runs[0]).empty());

  // transfer diagonal; sweep shape
  std::istringstream transfer(slurp(runs[0] / "transfer.csv"));
  std::string line;
  std::getline(transfer, line);
  EXPECT_EQ(line, "source,set_size,victim_0,victim_1");
  for (int k = 0; k < 2; ++k) {
    std::getline(transfer, line);
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 4u);
    if (cells[1] != "0") {
      EXPECT_EQ(cells[2 + k], "1") << line;
    }
  }
  const auto sweep = slurp(runs[0] / "sweep.csv");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 11);

  std::ofstream(runs[0] / "perf.csv", std::ios::app) << "tampered\n";
  EXPECT_EQ(verify_manifests(runs[0]), std::vector<std::string>{(runs[0] / "perf.csv").string()});
}
