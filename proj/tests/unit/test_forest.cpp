#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aegis/core/errors.hpp"
#include "aegis/forest/forest.hpp"

using namespace aegis;
using namespace aegis::forest;

namespace {

// label = 1 iff x[key] > 0; other features are uniform noise.
LabeledDataset sign_dataset(std::size_t n, std::size_t d, std::size_t key, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset data;
  data.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      data.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = uniform(rng, -1, 1);
    }
    data.y.push_back(data.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(key)) > 0 ? kUnsafe : kSafe);
  }
  return data;
}

LabeledDataset xor_dataset() {
  LabeledDataset data;
  data.X.resize(400, 2);
  Rng rng(4);
  for (int i = 0; i < 400; ++i) {
    const double a = uniform(rng, -1, 1), b = uniform(rng, -1, 1);
    data.X(i, 0) = a;
    data.X(i, 1) = b;
    data.y.push_back((a > 0) != (b > 0) ? kUnsafe : kSafe);
  }
  return data;
}

ForestConfig small(std::size_t trees = 20) {
  ForestConfig cfg;
  cfg.n_trees = trees;
  return cfg;
}

}  // namespace

TEST(Forest, RejectsSingleClassData) {
  auto data = sign_dataset(50, 3, 0, 1);
  std::fill(data.y.begin(), data.y.end(), kSafe);
  EXPECT_THROW(RandomForest::train(data, small(), 1), ConfigError);
  LabeledDataset empty;
  empty.X.resize(0, 2);
  EXPECT_THROW(RandomForest::train(empty, small(), 1), ConfigError);
}

TEST(Forest, RejectsBadLabelsAndShapes) {
  auto data = sign_dataset(20, 2, 0, 1);
  data.y[0] = 2;
  EXPECT_THROW(RandomForest::train(data, small(), 1), ConfigError);
  data.y.pop_back();
  EXPECT_THROW(RandomForest::train(data, small(), 1), DimensionError);
}

TEST(Forest, StumpCannotFitXor) {
  const auto data = xor_dataset();
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.max_depth = 1;
  const auto rf = RandomForest::train(data, cfg, 3);
  EXPECT_LE(rf.depth(), 1u);
  EXPECT_LE(rf.accuracy(data), 0.75);
}

TEST(Forest, DeepForestFitsXor) {
  const auto data = xor_dataset();
  EXPECT_GE(RandomForest::train(data, small(), 3).accuracy(data), 0.99);
}

TEST(Forest, LabelFeatureDominatesImportance) {
  const auto data = sign_dataset(1000, 6, 3, 7);
  const auto rf = RandomForest::train(data, {}, 7);
  EXPECT_GE(rf.importances()[3], 0.9);
  EXPECT_NEAR(rf.importances().sum(), 1.0, 1e-9);
  EXPECT_GE(rf.importances().minCoeff(), 0.0);
  const auto top = select_top_features(rf, 0.2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0], 3u);
}

TEST(Forest, TopTwentyPercentOf44IsNine) {
  const auto data = sign_dataset(400, 44, 17, 9);
  const auto rf = RandomForest::train(data, small(30), 9);
  const auto top = select_top_features(rf, 0.2);
  EXPECT_EQ(top.size(), 9u);
  EXPECT_EQ(top[0], 17u);
  EXPECT_EQ(select_top_features(rf, 1.0).size(), 44u);
  EXPECT_THROW(select_top_features(rf, 0.0), ConfigError);
  EXPECT_THROW(select_top_features(rf, 1.5), ConfigError);
}

TEST(Forest, TopFeaturesBreakTiesByIndex) {
  nlohmann::json j = {{"dim", 4},
                      {"importances", {0.2, 0.3, 0.3, 0.2}},
                      {"trees", {{{"feature", {-1}}, {"threshold", {0.0}}, {"left", {-1}}, {"right", {-1}},
                                  {"p_unsafe", {0.5}}}}}};
  const auto rf = RandomForest::from_json(j);
  EXPECT_EQ(select_top_features(rf, 1.0), (std::vector<std::size_t>{1, 2, 0, 3}));
  EXPECT_EQ(select_top_features(rf, 0.5), (std::vector<std::size_t>{1, 2}));
}

// Property: scores are a distribution at every point.
TEST(Forest, ScoresSumToOne) {
  const auto rf = RandomForest::train(sign_dataset(300, 3, 1, 2), small(), 2);
  Rng rng(10);
  for (int i = 0; i < 10000; ++i) {
    const Vector x = Vector::Random(3) * 3.0;
    const auto s = rf.predict_scores(x);
    EXPECT_NEAR(s.safe + s.unsafe, 1.0, 1e-9);
    EXPECT_GE(s.safe, 0.0);
    EXPECT_GE(s.unsafe, 0.0);
  }
}

TEST(Forest, UnanimousPointScoresOneZero) {
  const auto rf = RandomForest::train(sign_dataset(500, 1, 0, 5), small(), 5);
  const auto s = rf.predict_scores(Vector::Constant(1, -0.9));
  EXPECT_EQ(s.safe, 1.0);
  EXPECT_EQ(s.unsafe, 0.0);
}

TEST(Forest, SeparableTrainAccuracy) {
  const auto data = sign_dataset(800, 5, 2, 11);
  EXPECT_GE(RandomForest::train(data, small(), 11).accuracy(data), 0.99);
}

TEST(Forest, PureSplitStopsGrowth) {
  LabeledDataset data;
  data.X.resize(100, 1);
  for (int i = 0; i < 100; ++i) {
    data.X(i, 0) = i;
    data.y.push_back(i >= 50 ? kUnsafe : kSafe);
  }
  EXPECT_LE(RandomForest::train(data, small(), 1).depth(), 1u);
}

// Each row is missed by one bootstrap with probability (1 - 1/n)^n < e^-1, so
// by all 100 with probability < e^-100; the union over 500 rows stays far
// below 1e-6.
TEST(Forest, BootstrapCoversEveryRow) {
  const auto data = sign_dataset(500, 3, 0, 13);
  const auto rf = RandomForest::train(data, {}, 13);
  ASSERT_EQ(rf.in_bag_coverage().size(), 500u);
  for (auto c : rf.in_bag_coverage()) EXPECT_GE(c, 1u);
}

TEST(Forest, BalancedBootstrapHandlesImbalance) {
  auto data = sign_dataset(1000, 2, 0, 15);
  // keep only a handful of unsafe rows
  std::vector<std::size_t> keep;
  std::size_t unsafe = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.y[i] == kSafe || unsafe++ < 20) keep.push_back(i);
  }
  const auto skewed = data.subset(keep);
  ForestConfig cfg = small();
  cfg.balanced_bootstrap = true;
  const auto rf = RandomForest::train(skewed, cfg, 15);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < skewed.size(); ++i) {
    if (skewed.y[i] == kUnsafe) hit += rf.predict(skewed.X.row(static_cast<Eigen::Index>(i)).transpose()) == kUnsafe;
  }
  EXPECT_GE(hit, 19u);
}

TEST(Forest, DeterministicAcrossWorkers) {
  const auto data = sign_dataset(300, 4, 1, 17);
  ForestConfig a = small(), b = small();
  b.workers = 3;
  const auto ra = RandomForest::train(data, a, 17);
  const auto rb = RandomForest::train(data, b, 17);
  EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
}

TEST(Forest, JsonRoundTripPreservesPredictions) {
  const auto rf = RandomForest::train(sign_dataset(300, 3, 2, 19), small(), 19);
  const auto back = RandomForest::from_json(nlohmann::json::parse(rf.to_json().dump()));
  for (int i = 0; i < 500; ++i) {
    const Vector x = Vector::Random(3);
    EXPECT_EQ(rf.predict_scores(x).unsafe, back.predict_scores(x).unsafe);
  }
  EXPECT_TRUE(bitwise_equal(rf.importances(), back.importances()));
  EXPECT_THROW(RandomForest::from_json(nlohmann::json{{"dim", 1}}), ConfigError);
}

TEST(Forest, ImportanceCsv) {
  auto data = sign_dataset(200, 2, 1, 21);
  data.feature_names = {"theta", "omega"};
  const auto rf = RandomForest::train(data, small(), 21);
  std::ostringstream out;
  write_importance_csv(out, rf, data);
  const auto text = out.str();
  EXPECT_EQ(text.rfind("feature,importance\nomega,", 0), 0u);
  EXPECT_NE(text.find("\ntheta,"), std::string::npos);
}
