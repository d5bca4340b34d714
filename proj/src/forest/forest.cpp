#include "aegis/forest/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "aegis/core/errors.hpp"
#include "aegis/core/parallel.hpp"
#include "aegis/core/random.hpp"

namespace aegis::forest {

using nlohmann::json;

std::size_t LabeledDataset::count(int label) const {
  return static_cast<std::size_t>(std::count(y.begin(), y.end(), label));
}

void LabeledDataset::validate() const {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw DimensionError("feature rows and labels differ in count");
  if (!feature_names.empty() && feature_names.size() != dim()) {
    throw DimensionError("feature names do not match the feature count");
  }
  for (int label : y) {
    if (label != kSafe && label != kUnsafe) throw ConfigError("labels must be 0 (safe) or 1 (unsafe)");
  }
  if (!X.allFinite()) throw NumericError("features must be finite");
}

std::string LabeledDataset::feature_name(std::size_t j) const {
  return j < feature_names.size() ? feature_names[j] : "x" + std::to_string(j);
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& rows) const {
  LabeledDataset out;
  out.feature_names = feature_names;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    out.y.push_back(y.at(rows[i]));
  }
  return out;
}

void ForestConfig::validate() const {
  if (n_trees == 0) throw ConfigError("forest needs at least one tree");
  if (max_depth == 0) throw ConfigError("max_depth must be at least 1");
  if (min_samples_leaf == 0) throw ConfigError("min_samples_leaf must be at least 1");
}

namespace {

double gini(double n, double n1) {
  if (n <= 0.0) return 0.0;
  const double p = n1 / n;
  return 2.0 * p * (1.0 - p);
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double child_impurity = 0.0;  // weighted by child fraction
};

class TreeBuilder {
 public:
  TreeBuilder(const LabeledDataset& data, const ForestConfig& cfg, std::size_t max_features, Rng& rng)
      : data_(data), cfg_(cfg), max_features_(max_features), rng_(rng),
        importance_(Vector::Zero(static_cast<Eigen::Index>(data.dim()))) {}

  std::vector<TreeNode> build(std::vector<std::size_t> rows) {
    rows_ = std::move(rows);
    total_ = static_cast<double>(rows_.size());
    struct Work {
      std::size_t begin, end, depth;
      int node;
    };
    nodes_.clear();
    nodes_.emplace_back();
    std::vector<Work> stack{{0, rows_.size(), 0, 0}};
    while (!stack.empty()) {
      const Work w = stack.back();
      stack.pop_back();
      const double n = static_cast<double>(w.end - w.begin);
      double n1 = 0.0;
      for (std::size_t i = w.begin; i < w.end; ++i) n1 += data_.y[rows_[i]];
      nodes_[static_cast<std::size_t>(w.node)].p_unsafe = n1 / n;
      const double impurity = gini(n, n1);
      if (impurity == 0.0 || w.depth >= cfg_.max_depth || w.end - w.begin < 2 * cfg_.min_samples_leaf) continue;
      const Split split = best_split(w.begin, w.end);
      if (split.feature < 0) continue;

      const auto col = static_cast<Eigen::Index>(split.feature);
      const auto mid = std::partition(rows_.begin() + static_cast<std::ptrdiff_t>(w.begin),
                                      rows_.begin() + static_cast<std::ptrdiff_t>(w.end), [&](std::size_t r) {
                                        return data_.X(static_cast<Eigen::Index>(r), col) <= split.threshold;
                                      });
      const auto m = static_cast<std::size_t>(mid - rows_.begin());
      importance_[col] += (n / total_) * (impurity - split.child_impurity);

      const int left = static_cast<int>(nodes_.size());
      nodes_.emplace_back();
      nodes_.emplace_back();
      auto& node = nodes_[static_cast<std::size_t>(w.node)];
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.left = left;
      node.right = left + 1;
      stack.push_back({m, w.end, w.depth + 1, left + 1});
      stack.push_back({w.begin, m, w.depth + 1, left});
    }
    return std::move(nodes_);
  }

  const Vector& importance() const { return importance_; }

 private:
  Split best_split(std::size_t begin, std::size_t end) {
    const std::size_t d = data_.dim();
    std::vector<std::size_t> features(d);
    std::iota(features.begin(), features.end(), 0);
    Split best;
    double best_impurity = std::numeric_limits<double>::infinity();
    std::size_t tried = 0;
    const double n = static_cast<double>(end - begin);
    double n1 = 0.0;
    for (std::size_t i = begin; i < end; ++i) n1 += data_.y[rows_[i]];

    // Draw features without replacement; constant ones do not count towards
    // max_features, so a split is found whenever one exists.
    for (std::size_t k = 0; k < d && tried < max_features_; ++k) {
      std::swap(features[k], features[k + uniform_index(rng_, d - k)]);
      const auto f = static_cast<Eigen::Index>(features[k]);
      values_.clear();
      for (std::size_t i = begin; i < end; ++i) {
        values_.emplace_back(data_.X(static_cast<Eigen::Index>(rows_[i]), f), data_.y[rows_[i]]);
      }
      std::sort(values_.begin(), values_.end());
      if (values_.front().first == values_.back().first) continue;
      ++tried;
      double left_n = 0.0, left_n1 = 0.0;
      const std::size_t min_leaf = cfg_.min_samples_leaf;
      for (std::size_t i = 0; i + 1 < values_.size(); ++i) {
        left_n += 1.0;
        left_n1 += values_[i].second;
        if (values_[i].first == values_[i + 1].first) continue;
        if (i + 1 < min_leaf || values_.size() - (i + 1) < min_leaf) continue;
        const double right_n = n - left_n, right_n1 = n1 - left_n1;
        const double child = (left_n / n) * gini(left_n, left_n1) + (right_n / n) * gini(right_n, right_n1);
        if (child < best_impurity) {
          best_impurity = child;
          const double a = values_[i].first, b = values_[i + 1].first;
          double thr = a + 0.5 * (b - a);
          if (!(thr < b)) thr = a;
          best = {static_cast<int>(f), thr, child};
        }
      }
    }
    return best;
  }

  const LabeledDataset& data_;
  const ForestConfig& cfg_;
  std::size_t max_features_;
  Rng& rng_;
  Vector importance_;
  std::vector<std::size_t> rows_;
  std::vector<TreeNode> nodes_;
  std::vector<std::pair<double, int>> values_;
  double total_ = 0.0;
};

std::vector<std::size_t> bootstrap(const LabeledDataset& data, bool balanced, Rng& rng) {
  const std::size_t n = data.size();
  std::vector<std::size_t> rows;
  rows.reserve(n);
  if (!balanced) {
    for (std::size_t i = 0; i < n; ++i) rows.push_back(uniform_index(rng, n));
    return rows;
  }
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < n; ++i) by_class[data.y[i]].push_back(i);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pool = by_class[i % 2];
    rows.push_back(pool[uniform_index(rng, pool.size())]);
  }
  return rows;
}

std::size_t tree_depth(const std::vector<TreeNode>& nodes, int at) {
  const auto& node = nodes[static_cast<std::size_t>(at)];
  if (node.feature < 0) return 0;
  return 1 + std::max(tree_depth(nodes, node.left), tree_depth(nodes, node.right));
}

}  // namespace

RandomForest RandomForest::train(const LabeledDataset& data, const ForestConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  data.validate();
  if (data.size() == 0 || data.dim() == 0) throw ConfigError("forest training data is empty");
  if (data.count(kSafe) == 0 || data.count(kUnsafe) == 0) {
    throw ConfigError("forest training data must contain both classes");
  }
  const std::size_t d = data.dim();
  std::size_t mtry = cfg.max_features;
  if (mtry == 0) mtry = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
  mtry = std::clamp<std::size_t>(mtry, 1, d);

  RandomForest rf;
  rf.dim_ = d;
  rf.trees_.resize(cfg.n_trees);
  std::vector<Vector> tree_importance(cfg.n_trees);
  std::vector<std::vector<std::size_t>> in_bag(cfg.n_trees);
  parallel_for(
      cfg.n_trees,
      [&](std::size_t t) {
        Rng rng(derive_seed(seed, t));
        auto rows = bootstrap(data, cfg.balanced_bootstrap, rng);
        in_bag[t] = rows;
        TreeBuilder builder(data, cfg, mtry, rng);
        rf.trees_[t] = builder.build(std::move(rows));
        tree_importance[t] = builder.importance();
      },
      cfg.workers);

  rf.coverage_.assign(data.size(), 0);
  std::vector<char> seen(data.size());
  for (const auto& rows : in_bag) {
    std::fill(seen.begin(), seen.end(), 0);
    for (auto r : rows) seen[r] = 1;
    for (std::size_t i = 0; i < seen.size(); ++i) rf.coverage_[i] += static_cast<std::size_t>(seen[i]);
  }

  rf.importances_ = Vector::Zero(static_cast<Eigen::Index>(d));
  for (const auto& imp : tree_importance) {
    const double s = imp.sum();
    if (s > 0.0) rf.importances_ += imp / s;
  }
  const double total = rf.importances_.sum();
  if (total > 0.0) {
    rf.importances_ /= total;
  } else {
    rf.importances_.setConstant(1.0 / static_cast<double>(d));
  }
  return rf;
}

Scores RandomForest::predict_scores(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != dim_) throw DimensionError("forest input has the wrong dimension");
  double unsafe = 0.0;
  for (const auto& nodes : trees_) {
    const TreeNode* node = &nodes.front();
    while (node->feature >= 0) {
      node = &nodes[static_cast<std::size_t>(x[node->feature] <= node->threshold ? node->left : node->right)];
    }
    unsafe += node->p_unsafe;
  }
  unsafe /= static_cast<double>(trees_.size());
  return {1.0 - unsafe, unsafe};
}

int RandomForest::predict(const Vector& x) const {
  const auto s = predict_scores(x);
  return s.unsafe > s.safe ? kUnsafe : kSafe;
}

double RandomForest::accuracy(const LabeledDataset& data) const {
  if (data.size() == 0) throw ConfigError("accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    hits += predict(data.X.row(static_cast<Eigen::Index>(i)).transpose()) == data.y[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

std::size_t RandomForest::depth() const {
  std::size_t out = 0;
  for (const auto& t : trees_) out = std::max(out, tree_depth(t, 0));
  return out;
}

json RandomForest::to_json() const {
  json trees = json::array();
  for (const auto& nodes : trees_) {
    json f = json::array(), thr = json::array(), l = json::array(), r = json::array(), p = json::array();
    for (const auto& n : nodes) {
      f.push_back(n.feature);
      thr.push_back(n.threshold);
      l.push_back(n.left);
      r.push_back(n.right);
      p.push_back(n.p_unsafe);
    }
    trees.push_back({{"feature", f}, {"threshold", thr}, {"left", l}, {"right", r}, {"p_unsafe", p}});
  }
  return {{"dim", dim_}, {"importances", to_std(importances_)}, {"trees", trees}};
}

RandomForest RandomForest::from_json(const json& j) {
  RandomForest rf;
  try {
    rf.dim_ = j.at("dim").get<std::size_t>();
    rf.importances_ = from_std(j.at("importances").get<std::vector<double>>());
    for (const auto& t : j.at("trees")) {
      const auto f = t.at("feature").get<std::vector<int>>();
      const auto thr = t.at("threshold").get<std::vector<double>>();
      const auto l = t.at("left").get<std::vector<int>>();
      const auto r = t.at("right").get<std::vector<int>>();
      const auto p = t.at("p_unsafe").get<std::vector<double>>();
      if (f.empty() || thr.size() != f.size() || l.size() != f.size() || r.size() != f.size() ||
          p.size() != f.size()) {
        throw ConfigError("forest tree arrays differ in length");
      }
      std::vector<TreeNode> nodes(f.size());
      const int n = static_cast<int>(f.size());
      for (std::size_t i = 0; i < f.size(); ++i) {
        nodes[i] = {f[i], thr[i], l[i], r[i], p[i]};
        if (f[i] >= static_cast<int>(rf.dim_) || (f[i] >= 0 && (l[i] <= static_cast<int>(i) || l[i] >= n ||
                                                                 r[i] <= static_cast<int>(i) || r[i] >= n))) {
          throw ConfigError("forest tree node out of range");
        }
      }
      rf.trees_.push_back(std::move(nodes));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed forest: ") + e.what());
  }
  if (rf.trees_.empty()) throw ConfigError("forest has no trees");
  if (static_cast<std::size_t>(rf.importances_.size()) != rf.dim_) throw ConfigError("importance size mismatch");
  return rf;
}

RandomForest rf_train(const LabeledDataset& data, std::size_t n_trees, std::size_t max_depth, std::uint64_t seed) {
  ForestConfig cfg;
  cfg.n_trees = n_trees;
  cfg.max_depth = max_depth;
  return RandomForest::train(data, cfg, seed);
}

std::vector<std::size_t> select_top_features(const RandomForest& rf, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("feature fraction must lie in (0, 1]");
  const std::size_t d = rf.dim();
  // guard against fraction * d landing a hair above an integer
  const double scaled = fraction * static_cast<double>(d);
  auto k = static_cast<std::size_t>(std::ceil(scaled - 1e-9 * scaled));
  k = std::clamp<std::size_t>(k, 1, d);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  const auto& imp = rf.importances();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return imp[static_cast<Eigen::Index>(a)] > imp[static_cast<Eigen::Index>(b)];
  });
  order.resize(k);
  return order;
}

void write_importance_csv(std::ostream& out, const RandomForest& rf, const LabeledDataset& names) {
  out << "feature,importance\n";
  for (auto j : select_top_features(rf, 1.0)) {
    out << names.feature_name(j) << ',' << format_double(rf.importances()[static_cast<Eigen::Index>(j)]) << '\n';
  }
}

}  // namespace aegis::forest
