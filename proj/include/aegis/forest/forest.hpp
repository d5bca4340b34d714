#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "aegis/core/types.hpp"

namespace aegis::forest {

/// 0 = safe, 1 = unsafe.
enum Label : int { kSafe = 0, kUnsafe = 1 };

struct LabeledDataset {
  Matrix X;  // one row per state
  std::vector<int> y;
  std::vector<std::string> feature_names;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t count(int label) const;
  /// Shapes agree, labels are 0/1, features finite. Names may be empty.
  void validate() const;
  /// Names if set, otherwise x0, x1, ...
  std::string feature_name(std::size_t j) const;
  LabeledDataset subset(const std::vector<std::size_t>& rows) const;
};

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 50;
  std::size_t min_samples_leaf = 1;
  /// Features tried per split; 0 means round(sqrt(d)), at least 1.
  std::size_t max_features = 0;
  /// Bootstrap each class separately at n/2 rows apiece.
  bool balanced_bootstrap = false;
  std::size_t workers = 1;

  void validate() const;
};

struct Scores {
  double safe = 0.0;
  double unsafe = 0.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left iff x[feature] <= threshold
  int left = -1;
  int right = -1;
  double p_unsafe = 0.0;  // leaf class frequency
};

class RandomForest {
 public:
  static RandomForest train(const LabeledDataset& data, const ForestConfig& cfg, std::uint64_t seed);

  Scores predict_scores(const Vector& x) const;
  /// Majority vote on the averaged scores; ties go to safe.
  int predict(const Vector& x) const;
  double accuracy(const LabeledDataset& data) const;

  /// Mean decrease in impurity, normalized to sum 1.
  const Vector& importances() const { return importances_; }
  std::size_t n_trees() const { return trees_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t depth() const;
  /// Number of trees whose bootstrap contained each training row; empty for
  /// a forest loaded from JSON.
  const std::vector<std::size_t>& in_bag_coverage() const { return coverage_; }

  nlohmann::json to_json() const;
  static RandomForest from_json(const nlohmann::json& j);

 private:
  std::vector<std::vector<TreeNode>> trees_;
  Vector importances_;
  std::size_t dim_ = 0;
  std::vector<std::size_t> coverage_;
};

RandomForest rf_train(const LabeledDataset& data, std::size_t n_trees, std::size_t max_depth, std::uint64_t seed);

/// ceil(fraction * d) feature indices by descending importance, ties to the
/// lower index. fraction must lie in (0, 1].
std::vector<std::size_t> select_top_features(const RandomForest& rf, double fraction);

/// feature,importance rows in descending importance.
void write_importance_csv(std::ostream& out, const RandomForest& rf, const LabeledDataset& names);

}  // namespace aegis::forest
