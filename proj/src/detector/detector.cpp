#include "aegis/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "aegis/core/errors.hpp"
#include "aegis/core/hash.hpp"
#include "aegis/neuralctl/adam.hpp"
#include "aegis/neuralctl/policies.hpp"

namespace aegis::detector {

using forest::LabeledDataset;
using nlohmann::json;

std::string_view to_string(Kind k) { return k == Kind::forest ? "forest" : "dense"; }

Kind parse_kind(std::string_view name) {
  if (name == "forest") return Kind::forest;
  if (name == "dense") return Kind::dense;
  throw ConfigError("unknown detector kind '" + std::string(name) + "' (expected forest or dense)");
}

namespace {

std::string state_key(const State& s) {
  std::string key(static_cast<std::size_t>(s.size()) * sizeof(double), '\0');
  std::memcpy(key.data(), s.data(), key.size());
  return key;
}

}  // namespace

LabeledDataset build_dataset(const std::vector<attack::AttackRecord>& records,
                             const std::vector<envsim::Trajectory>& safe_trajs) {
  std::vector<const State*> rows;
  std::vector<int> labels;
  std::unordered_map<std::string, std::size_t> seen;
  std::optional<Eigen::Index> dim;
  const auto add = [&](const State& s, int label) {
    if (!dim) dim = s.size();
    if (s.size() != *dim) throw DimensionError("states of different dimensions in detector data");
    auto [it, inserted] = seen.emplace(state_key(s), rows.size());
    if (inserted) {
      rows.push_back(&s);
      labels.push_back(label);
    } else if (label == forest::kUnsafe) {
      labels[it->second] = forest::kUnsafe;
    }
  };
  for (const auto& traj : safe_trajs) {
    for (const auto& s : traj.states) add(s, forest::kSafe);
  }
  for (const auto& r : records) {
    if (r.numeric_failure) continue;
    const int label = r.unsafe ? forest::kUnsafe : forest::kSafe;
    for (const auto& s : r.states) add(s, label);
  }
  if (rows.empty()) throw ConfigError("no states to build a detector dataset from");
  LabeledDataset data;
  data.X.resize(static_cast<Eigen::Index>(rows.size()), *dim);
  for (std::size_t i = 0; i < rows.size(); ++i) data.X.row(static_cast<Eigen::Index>(i)) = rows[i]->transpose();
  data.y = std::move(labels);
  return data;
}

void DetectorConfig::validate() const {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  if (!(minority_floor >= 0.0 && minority_floor <= 0.5)) throw ConfigError("minority_floor must lie in [0, 0.5]");
  if (kind == Kind::forest) forest.validate();
  if (kind == Kind::dense) {
    if (dense.hidden.empty()) throw ConfigError("dense detector needs hidden layers");
    if (!(dense.learning_rate > 0.0) || dense.epochs == 0 || dense.batch_size == 0) {
      throw ConfigError("invalid dense detector hyperparameters");
    }
  }
}

json DetectorConfig::to_json() const {
  json j{{"kind", to_string(kind)}, {"test_fraction", test_fraction}, {"max_rows", max_rows}, {"minority_floor", minority_floor}};
  if (kind == Kind::forest) {
    j["n_trees"] = forest.n_trees;
    j["max_depth"] = forest.max_depth;
    j["min_samples_leaf"] = forest.min_samples_leaf;
    j["max_features"] = forest.max_features;
    j["balanced_bootstrap"] = forest.balanced_bootstrap;
  } else {
    j["hidden"] = dense.hidden;
    j["learning_rate"] = dense.learning_rate;
    j["epochs"] = dense.epochs;
    j["batch_size"] = dense.batch_size;
    j["class_weighting"] = dense.class_weighting;
  }
  return j;
}

Detector::Detector(forest::RandomForest rf, double c)
    : kind_(Kind::forest), c_(c), rf_(std::make_shared<const forest::RandomForest>(std::move(rf))) {}

Detector::Detector(neuralctl::DenseNet net, Vector mean, Vector scale, double c)
    : kind_(Kind::dense), c_(c), net_(std::make_shared<const neuralctl::DenseNet>(std::move(net))),
      mean_(std::move(mean)), scale_(std::move(scale)) {
  if (net_->output_dim() != 2) throw DimensionError("dense detector must have two outputs");
  if (static_cast<std::size_t>(mean_.size()) != net_->input_dim() || scale_.size() != mean_.size()) {
    throw DimensionError("standardization does not match the detector input");
  }
  if (!((scale_.array() > 0.0).all())) throw ConfigError("standardization scale must be positive");
}

Detector Detector::with_c(double c) const {
  Detector d = *this;
  d.c_ = c;
  return d;
}

std::size_t Detector::input_dim() const { return kind_ == Kind::forest ? rf_->dim() : net_->input_dim(); }

forest::Scores Detector::scores(const State& s) const {
  if (static_cast<std::size_t>(s.size()) != input_dim()) throw DimensionError("detector input has the wrong dimension");
  if (kind_ == Kind::forest) return rf_->predict_scores(s);
  const Vector z = net_->forward(Vector((s - mean_).array() / scale_.array()));
  // softmax over (safe, unsafe) logits
  const double m = z.maxCoeff();
  const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  const double unsafe = e1 / (e0 + e1);
  return {1.0 - unsafe, unsafe};
}

double Detector::margin(const State& s) const {
  const auto sc = scores(s);
  return sc.safe - sc.unsafe;
}

json Detector::to_json() const {
  json j{{"format_version", 1}, {"kind", to_string(kind_)}, {"C", c_}};
  if (kind_ == Kind::forest) {
    j["forest"] = rf_->to_json();
  } else {
    j["net"] = neuralctl::to_json(*net_);
    j["mean"] = to_std(mean_);
    j["scale"] = to_std(scale_);
  }
  return j;
}

Detector Detector::from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != 1) throw ConfigError("unsupported detector format version");
    const Kind kind = parse_kind(j.at("kind").get<std::string>());
    const double c = j.at("C").get<double>();
    if (kind == Kind::forest) return Detector(forest::RandomForest::from_json(j.at("forest")), c);
    return Detector(neuralctl::dense_net_from_json(j.at("net")), from_std(j.at("mean").get<std::vector<double>>()),
                    from_std(j.at("scale").get<std::vector<double>>()), c);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed detector: ") + e.what());
  }
}

double accuracy(const Detector& det, const LabeledDataset& data) {
  if (data.size() == 0) throw ConfigError("accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool unsafe = det.classify(data.X.row(static_cast<Eigen::Index>(i)).transpose());
    hits += (unsafe ? forest::kUnsafe : forest::kSafe) == data.y[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace {

std::vector<std::size_t> rows_of(const LabeledDataset& data, int label) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.y[i] == label) out.push_back(i);
  }
  return out;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& data, double test_fraction,
                                                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (int label : {forest::kSafe, forest::kUnsafe}) {
    auto rows = rows_of(data, label);
    shuffle(rows, rng);
    auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(rows.size())));
    if (rows.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, rows.size() - 1);
    test.insert(test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, rows.size())));
    train.insert(train.end(), rows.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, rows.size())), rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {data.subset(train), data.subset(test)};
}

LabeledDataset stratified_cap(const LabeledDataset& data, std::size_t max_rows, std::uint64_t seed,
                              double minority_floor) {
  if (!(minority_floor >= 0.0 && minority_floor <= 0.5)) throw ConfigError("minority floor must lie in [0, 0.5]");
  if (max_rows == 0 || data.size() <= max_rows) return data;
  Rng rng(seed);
  auto safe = rows_of(data, forest::kSafe);
  auto unsafe = rows_of(data, forest::kUnsafe);
  const bool unsafe_minor = unsafe.size() <= safe.size();
  auto& minor = unsafe_minor ? unsafe : safe;
  auto& major = unsafe_minor ? safe : unsafe;
  const auto budget = static_cast<double>(max_rows);
  const double share = static_cast<double>(minor.size()) / static_cast<double>(data.size());
  std::size_t k_minor = static_cast<std::size_t>(std::lround(std::max(share, minority_floor) * budget));
  k_minor = std::clamp<std::size_t>(k_minor, minor.empty() ? 0 : 1, minor.size());
  const std::size_t k_major = std::min(major.size(), max_rows - k_minor);
  // safe rows are always drawn first so the stream does not depend on which class is smaller
  std::vector<std::size_t> keep;
  for (auto* rows : {&safe, &unsafe}) {
    const std::size_t k = rows == &minor ? k_minor : k_major;
    shuffle(*rows, rng);
    keep.insert(keep.end(), rows->begin(), rows->begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(keep.begin(), keep.end());
  return data.subset(keep);
}

namespace {

Detector train_dense(const LabeledDataset& train, const DenseHyper& hyper, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(train.size());
  const Vector mean = train.X.colwise().mean().transpose();
  Vector scale = ((train.X.rowwise() - mean.transpose()).array().square().colwise().sum() / static_cast<double>(n))
                     .sqrt()
                     .transpose();
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (!(scale[j] > 1e-12)) scale[j] = 1.0;
  }
  const Matrix Z = ((train.X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).transpose();

  Rng rng(derive_seed(seed, "init"));
  std::vector<std::size_t> sizes{train.dim()};
  sizes.insert(sizes.end(), hyper.hidden.begin(), hyper.hidden.end());
  sizes.push_back(2);
  auto net = neuralctl::DenseNet::make(sizes, neuralctl::Activation::relu, neuralctl::Activation::identity, rng,
                                       1.0 / std::sqrt(static_cast<double>(hyper.hidden.back())));
  neuralctl::AdamConfig acfg;
  acfg.learning_rate = hyper.learning_rate;
  neuralctl::Adam adam(net, acfg);

  double w[2] = {1.0, 1.0};
  if (hyper.class_weighting) {
    for (int c : {0, 1}) {
      const double nc = static_cast<double>(train.count(c));
      w[c] = nc > 0 ? static_cast<double>(n) / (2.0 * nc) : 1.0;
    }
  }
  Rng order_rng(derive_seed(seed, "batch"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    shuffle(order, order_rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const auto b = static_cast<Eigen::Index>(end - start);
      Matrix batch(Z.rows(), b);
      for (Eigen::Index k = 0; k < b; ++k) batch.col(k) = Z.col(static_cast<Eigen::Index>(order[start + k]));
      const Matrix logits = net.forward_cached(batch);
      Matrix upstream(2, b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const int label = train.y[order[start + static_cast<std::size_t>(k)]];
        const double m = logits.col(k).maxCoeff();
        const double e0 = std::exp(logits(0, k) - m), e1 = std::exp(logits(1, k) - m);
        const double p1 = e1 / (e0 + e1);
        const double weight = w[label] / static_cast<double>(b);
        upstream(0, k) = weight * ((1.0 - p1) - (label == 0 ? 1.0 : 0.0));
        upstream(1, k) = weight * (p1 - (label == 1 ? 1.0 : 0.0));
      }
      adam.step(net, net.backward(upstream));
      if (!net.all_finite()) throw TrainingError("dense detector diverged in epoch " + std::to_string(epoch));
    }
  }
  net.clear_cache();
  return Detector(std::move(net), mean, scale);
}

}  // namespace

TrainReport train_detector(const LabeledDataset& data, const DetectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  data.validate();
  if (data.count(forest::kSafe) == 0 || data.count(forest::kUnsafe) == 0) {
    throw ConfigError("detector data must contain both safe and unsafe states");
  }
  const auto capped = stratified_cap(data, cfg.max_rows, derive_seed(seed, "cap"), cfg.minority_floor);
  auto [train, test] = stratified_split(capped, cfg.test_fraction, derive_seed(seed, "split"));
  if (train.count(forest::kUnsafe) == 0 || train.count(forest::kSafe) == 0) {
    throw ConfigError("too few rows of one class to split the detector data");
  }
  std::optional<Detector> det;
  if (cfg.kind == Kind::forest) {
    det.emplace(forest::RandomForest::train(train, cfg.forest, derive_seed(seed, "forest")));
  } else {
    det.emplace(train_dense(train, cfg.dense, derive_seed(seed, "dense")));
  }
  TrainReport report{*det, accuracy(*det, train), test.size() ? accuracy(*det, test) : 0.0, train.size(), test.size()};
  return report;
}

CRange make_c_range(double l, double h, std::size_t n) {
  if (!(l <= h)) throw ConfigError("C range needs l <= h");
  if (n < 2) throw ConfigError("C range needs at least two samples");
  CRange r{l, h, {}};
  for (std::size_t i = 0; i < n; ++i) {
    r.samples.push_back(i + 1 == n ? h : l + (h - l) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return r;
}

CRange c_range(const Detector& det, const LabeledDataset& data) {
  if (data.size() == 0) throw ConfigError("C range of an empty dataset");
  double l = std::numeric_limits<double>::infinity(), h = -l;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double m = det.margin(data.X.row(static_cast<Eigen::Index>(i)).transpose());
    l = std::min(l, m);
    h = std::max(h, m);
  }
  return make_c_range(l, h);
}

std::string dataset_hash(const LabeledDataset& data) {
  std::string bytes;
  const auto rows = static_cast<std::uint64_t>(data.size()), cols = static_cast<std::uint64_t>(data.dim());
  bytes.append(reinterpret_cast<const char*>(&rows), sizeof rows);
  bytes.append(reinterpret_cast<const char*>(&cols), sizeof cols);
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) {
      const double v = data.X(i, j);
      bytes.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    bytes.push_back(static_cast<char>(data.y[static_cast<std::size_t>(i)]));
  }
  return sha256_hex(bytes);
}

void save_detector(const Detector& det, const std::filesystem::path& path, const json& manifest_extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string text = det.to_json().dump();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
  }
  json manifest = manifest_extra.is_object() ? manifest_extra : json::object();
  manifest["kind"] = to_string(det.kind());
  manifest["C"] = det.c();
  manifest["checkpoint"] = path.filename().string();
  manifest["checkpoint_sha256"] = sha256_hex(text);
  std::ofstream out(path.string() + ".manifest", std::ios::binary);
  if (!out) throw ConfigError("cannot write manifest for " + path.string());
  out << manifest.dump(2) << '\n';
}

Detector load_detector(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read detector " + path.string());
  try {
    return Detector::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed detector " + path.string() + ": " + e.what());
  }
}

}  // namespace aegis::detector
