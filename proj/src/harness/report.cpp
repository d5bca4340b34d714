#include "aegis/harness/report.hpp"

#include <cmath>
#include <fstream>

#include "aegis/core/errors.hpp"
#include "aegis/core/hash.hpp"
#include "aegis/core/parallel.hpp"

namespace aegis::harness {

namespace fs = std::filesystem;
using nlohmann::json;

TransferMatrix transferability(const std::vector<std::vector<State>>& adversarial_sets,
                               const std::vector<PolicyPtr>& policies, const envsim::EnvModel& env,
                               const specdsl::SafetySpec& spec, const shield::EvalOptions& options) {
  if (policies.size() < 2) throw ConfigError("transferability needs at least two policies");
  if (adversarial_sets.size() != policies.size()) throw ConfigError("one adversarial set per policy");
  const std::size_t n = policies.size();
  TransferMatrix m;
  m.ratio.assign(n, std::vector<std::optional<double>>(n));
  attack::AttackOptions ao;
  ao.rollout_steps = options.rollout_steps;
  ao.record_state_stride = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m.names.push_back(policies[i]->name());
    const auto& set = adversarial_sets[i];
    m.set_sizes.push_back(set.size());
    if (set.empty()) continue;
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<char> unsafe(set.size());
      parallel_for(
          set.size(), [&](std::size_t k) { unsafe[k] = attack::evaluate_start(env, *policies[j], spec, set[k], ao).unsafe; },
          options.workers);
      std::size_t count = 0;
      for (char u : unsafe) count += static_cast<std::size_t>(u);
      m.ratio[i][j] = static_cast<double>(count) / static_cast<double>(set.size());
    }
  }
  return m;
}

namespace {

std::vector<double> returns_of(const envsim::EnvModel& env, const BlackBoxPolicy& policy,
                               const std::vector<State>& starts, const shield::EvalOptions& options) {
  std::vector<double> out(starts.size());
  envsim::RolloutOptions ro;
  ro.max_steps = options.rollout_steps;
  parallel_for(
      starts.size(), [&](std::size_t i) { out[i] = envsim::rollout(env, policy, starts[i], ro).perf_return; },
      options.workers);
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, std::nan("")};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

PerfReport perf_report(const envsim::EnvModel& env, const BlackBoxPolicy& original, const BlackBoxPolicy& shielded,
                       const std::vector<envsim::Trajectory>& bases, const attack::PerturbationBox& box,
                       std::size_t n_runs, std::uint64_t seed, const shield::EvalOptions& options) {
  if (n_runs == 0) throw ConfigError("performance report needs at least one run");
  std::vector<State> nominal;
  for (const auto& b : bases) nominal.push_back(b.states.at(0));
  const auto starts = shield::perturbed_nominal_starts(bases, box, n_runs, seed);

  PerfReport r;
  r.n_runs = n_runs;
  r.normalizer = std::abs(mean_std(returns_of(env, original, nominal, options)).first);
  std::tie(r.mean_return_orig, r.std_orig) = mean_std(returns_of(env, original, starts, options));
  std::tie(r.mean_return_shielded, r.std_shielded) = mean_std(returns_of(env, shielded, starts, options));
  const double k = r.normalizer > 0.0 ? r.normalizer : 1.0;
  r.normalized_orig = r.mean_return_orig / k;
  r.normalized_shielded = r.mean_return_shielded / k;
  const double diff = std::abs(r.mean_return_orig - r.mean_return_shielded);
  r.relative_gap = diff == 0.0 ? 0.0 : diff / std::abs(r.mean_return_orig);
  r.reliable = n_runs > 1;
  return r;
}

std::string csv_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

void write_table1_csv(std::ostream& out, const std::vector<Table1Row>& rows) {
  out << "benchmark,state_dim,filter_dim,horizon,epsilon,rand_attack,bo_attack,defense_succ_rate,"
         "defense_succ_rate_all_starts,attack_improvement\n";
  for (const auto& r : rows) {
    out << r.benchmark << ',' << r.state_dim << ',' << r.filter_dim << ',' << r.horizon << ','
        << (r.epsilon ? format_double(*r.epsilon) : std::string("init_box")) << ',' << format_double(r.rand_attack)
        << ',' << format_double(r.bo_attack) << ',' << csv_cell(r.defense_rate) << ','
        << csv_cell(r.defense_rate_all_starts) << ',' << csv_cell(r.attack_improvement) << '\n';
  }
}

void write_transfer_csv(std::ostream& out, const TransferMatrix& m) {
  out << "source,set_size";
  for (const auto& n : m.names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    out << m.names[i] << ',' << m.set_sizes[i];
    for (const auto& v : m.ratio[i]) out << ',' << (v ? format_double(*v) : std::string("N/A"));
    out << '\n';
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<shield::SweepRow>& rows) {
  out << "c,defense_rate,mean_perf_return,intervention_count,intervention_fraction,rollout_interventions,"
         "rollout_intervention_fraction\n";
  for (const auto& r : rows) {
    out << format_double(r.c) << ',' << format_double(r.defense_rate) << ',' << format_double(r.mean_perf_return)
        << ',' << r.intervention_count << ',' << format_double(r.intervention_fraction) << ','
        << r.rollout_interventions << ',' << format_double(r.rollout_intervention_fraction) << '\n';
  }
}

void write_perf_csv(std::ostream& out, const PerfReport& r) {
  out << "n_runs,normalizer,mean_return_orig,mean_return_shielded,std_orig,std_shielded,normalized_orig,"
         "normalized_shielded,relative_gap,reliable\n";
  out << r.n_runs << ',' << format_double(r.normalizer) << ',' << format_double(r.mean_return_orig) << ','
      << format_double(r.mean_return_shielded) << ',' << format_double(r.std_orig) << ','
      << format_double(r.std_shielded) << ',' << format_double(r.normalized_orig) << ','
      << format_double(r.normalized_shielded) << ',' << format_double(r.relative_gap) << ','
      << (r.reliable ? "true" : "false") << '\n';
}

Manifest::Manifest(fs::path run_dir, std::string stage, std::uint64_t seed)
    : run_dir_(std::move(run_dir)), stage_(std::move(stage)), seed_(seed) {}

json Manifest::entry(const fs::path& file) const {
  if (!fs::is_regular_file(file)) throw ConfigError("manifest entry is not a file: " + file.string());
  const auto rel = fs::relative(file, run_dir_);
  const bool inside = !rel.empty() && rel.native().rfind("..", 0) != 0;
  return {{"path", (inside ? rel : fs::absolute(file)).generic_string()}, {"sha256", sha256_file(file)}};
}

void Manifest::input(const fs::path& file) { inputs_.push_back(entry(file)); }
void Manifest::output(const fs::path& file) { outputs_.push_back(entry(file)); }

fs::path Manifest::write() const {
  const auto dir = run_dir_ / "manifests";
  fs::create_directories(dir);
  const auto path = dir / (stage_ + ".json");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << json{{"stage", stage_}, {"seed", seed_}, {"params", params_}, {"inputs", inputs_}, {"outputs", outputs_}}
             .dump(2)
      << '\n';
  return path;
}

}  // namespace aegis::harness
