#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aegis/shield/shield.hpp"

namespace aegis::harness {

/// Row i holds policy i's adversarial set, column j the evaluated policy.
/// An empty source set gives a row of nullopt (N/A).
struct TransferMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<std::optional<double>>> ratio;
  std::vector<std::size_t> set_sizes;
};

/// Entry (i, j): fraction of set i's states whose rollout under policy j is
/// unsafe. The diagonal is 1 whenever set i came from attacking policy i.
TransferMatrix transferability(const std::vector<std::vector<State>>& adversarial_sets,
                               const std::vector<PolicyPtr>& policies, const envsim::EnvModel& env,
                               const specdsl::SafetySpec& spec, const shield::EvalOptions& options = {});

struct PerfReport {
  std::size_t n_runs = 0;
  /// |mean return of pi_o from unperturbed base starts|
  double normalizer = 0.0;
  double mean_return_orig = 0.0;
  double mean_return_shielded = 0.0;
  double std_orig = 0.0;
  double std_shielded = 0.0;
  double normalized_orig = 0.0;
  double normalized_shielded = 0.0;
  /// |orig - shielded| / |orig|
  double relative_gap = 0.0;
  /// false for a single run, where no spread can be estimated
  bool reliable = true;
};

PerfReport perf_report(const envsim::EnvModel& env, const BlackBoxPolicy& original, const BlackBoxPolicy& shielded,
                       const std::vector<envsim::Trajectory>& bases, const attack::PerturbationBox& box,
                       std::size_t n_runs, std::uint64_t seed, const shield::EvalOptions& options = {});

/// Headline numbers for one benchmark, one row of table1.csv.
struct Table1Row {
  std::string benchmark;
  std::size_t state_dim = 0;
  std::size_t filter_dim = 0;
  std::size_t horizon = 0;
  std::optional<double> epsilon;  // nullopt: init-box widths
  double rand_attack = 0.0;
  double bo_attack = 0.0;
  std::optional<double> defense_rate;
  std::optional<double> defense_rate_all_starts;
  std::optional<double> attack_improvement;
};

void write_table1_csv(std::ostream& out, const std::vector<Table1Row>& rows);
void write_transfer_csv(std::ostream& out, const TransferMatrix& m);
void write_sweep_csv(std::ostream& out, const std::vector<shield::SweepRow>& rows);
void write_perf_csv(std::ostream& out, const PerfReport& r);

/// Empty string for nullopt, format_double otherwise.
std::string csv_cell(const std::optional<double>& v);

/// Stage manifest: seeds, parameters, and hashed input and output files.
/// Paths are stored relative to the run directory.
class Manifest {
 public:
  Manifest(std::filesystem::path run_dir, std::string stage, std::uint64_t seed);
  void param(const std::string& key, nlohmann::json value) { params_[key] = std::move(value); }
  void input(const std::filesystem::path& file);
  void output(const std::filesystem::path& file);
  /// Writes manifests/<stage>.json and returns its path.
  std::filesystem::path write() const;

 private:
  nlohmann::json entry(const std::filesystem::path& file) const;

  std::filesystem::path run_dir_;
  std::string stage_;
  std::uint64_t seed_;
  nlohmann::json params_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::array();
  nlohmann::json outputs_ = nlohmann::json::array();
};

}  // namespace aegis::harness
