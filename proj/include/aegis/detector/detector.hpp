#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "aegis/attack/attack.hpp"
#include "aegis/envsim/rollout.hpp"
#include "aegis/forest/forest.hpp"
#include "aegis/neuralctl/dense_net.hpp"

namespace aegis::detector {

enum class Kind { forest, dense };
std::string_view to_string(Kind k);
Kind parse_kind(std::string_view name);

/// Rows from safe trajectories and attack rollouts. Safe rollouts and safe
/// trajectories give safe rows; an unsafe rollout labels its perturbed start
/// and every successor unsafe. Rollouts that blew up are skipped. Exact
/// duplicates collapse to the first occurrence, and a state seen under both
/// labels is kept as unsafe. Throws ConfigError when both inputs are empty.
forest::LabeledDataset build_dataset(const std::vector<attack::AttackRecord>& records,
                                     const std::vector<envsim::Trajectory>& safe_trajs);

struct DenseHyper {
  std::vector<std::size_t> hidden{128, 128, 128};
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  /// Weight the loss by inverse class frequency.
  bool class_weighting = true;
};

struct DetectorConfig {
  Kind kind = Kind::forest;
  forest::ForestConfig forest = [] {
    forest::ForestConfig f;
    f.balanced_bootstrap = true;
    return f;
  }();
  DenseHyper dense;
  double test_fraction = 0.2;
  /// Stratified subsample above this many rows; 0 keeps everything.
  std::size_t max_rows = 50000;
  /// Budget share reserved for the rarer class when capping.
  double minority_floor = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Two-score classifier with the approximating constant C: a state is safe
/// iff score_safe > score_unsafe + C.
class Detector {
 public:
  Detector(forest::RandomForest rf, double c = 0.0);
  /// Dense backend: logits net plus per-feature standardization.
  Detector(neuralctl::DenseNet net, Vector mean, Vector scale, double c = 0.0);

  Kind kind() const { return kind_; }
  std::size_t input_dim() const;
  double c() const { return c_; }
  void set_c(double c) { c_ = c; }
  Detector with_c(double c) const;

  forest::Scores scores(const State& s) const;
  /// score_safe - score_unsafe
  double margin(const State& s) const;
  /// true = unsafe, the branch that hands control to the auxiliary policy.
  bool classify(const State& s) const { return !(margin(s) > c_); }

  nlohmann::json to_json() const;
  static Detector from_json(const nlohmann::json& j);

 private:
  Kind kind_;
  double c_;
  std::shared_ptr<const forest::RandomForest> rf_;
  std::shared_ptr<const neuralctl::DenseNet> net_;
  Vector mean_, scale_;
};

struct TrainReport {
  Detector detector;
  double train_accuracy = 0.0;
  double held_out_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

double accuracy(const Detector& det, const forest::LabeledDataset& data);

/// Stratified split: test_fraction of each class goes to the test side.
std::pair<forest::LabeledDataset, forest::LabeledDataset> stratified_split(const forest::LabeledDataset& data,
                                                                             double test_fraction, std::uint64_t seed);
/// Keeps at most max_rows rows, in their original order. The smaller class
/// gets max(its share, minority_floor) of the budget, capped at its size, and
/// the larger class fills the rest. With floor 0 the class proportions are
/// preserved (each class keeps at least one row).
forest::LabeledDataset stratified_cap(const forest::LabeledDataset& data, std::size_t max_rows, std::uint64_t seed,
                                      double minority_floor = 0.0);

TrainReport train_detector(const forest::LabeledDataset& data, const DetectorConfig& cfg, std::uint64_t seed);

struct CRange {
  double l = 0.0;
  double h = 0.0;
  std::vector<double> samples;  // 10 values, l and h included
};

CRange make_c_range(double l, double h, std::size_t n = 10);
/// Min and max of score_safe - score_unsafe over the rows of data.
CRange c_range(const Detector& det, const forest::LabeledDataset& data);

/// Checkpoint plus a sibling manifest (kind, hyperparameters, C, data hash).
void save_detector(const Detector& det, const std::filesystem::path& path, const nlohmann::json& manifest_extra);
Detector load_detector(const std::filesystem::path& path);
/// Content hash of a dataset, independent of how it was stored.
std::string dataset_hash(const forest::LabeledDataset& data);

}  // namespace aegis::detector
