#include "aegis/neuralctl/dense_net.hpp"

#include <cmath>

#include "aegis/core/errors.hpp"

namespace aegis::neuralctl {

namespace {

void apply_activation(Activation a, Matrix& z) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
  }
}

// Derivative expressed through the activation output, which is what the cache holds.
void scale_by_derivative(Activation a, const Matrix& out, Matrix& delta) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: delta = (out.array() > 0.0).select(delta, 0.0); break;
    case Activation::tanh: delta = (delta.array() * (1.0 - out.array().square())).matrix(); break;
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

void NetGradients::scale(double factor) {
  for (auto& w : weight) w *= factor;
  for (auto& b : bias) b *= factor;
  input *= factor;
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("network needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weight.rows() != layer.bias.size()) {
      throw DimensionError("layer " + std::to_string(l) + ": bias size does not match weight rows");
    }
    if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
      throw DimensionError("layer " + std::to_string(l) + ": input size " +
                           std::to_string(layer.weight.cols()) + " does not match previous output " +
                           std::to_string(layers_[l - 1].weight.rows()));
    }
  }
  if (!all_finite()) throw NumericError("network parameters are not finite");
}

DenseNet DenseNet::make(const std::vector<std::size_t>& sizes, Activation hidden,
                        Activation output, Rng& rng, double output_init) {
  if (sizes.size() < 2) throw ConfigError("network needs input and output sizes");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const bool last = l + 2 == sizes.size();
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double bound = last ? output_init : 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (Eigen::Index i = 0; i < out; ++i) {
      for (Eigen::Index j = 0; j < in; ++j) layer.weight(i, j) = uniform(rng, -bound, bound);
    }
    for (Eigen::Index i = 0; i < out; ++i) layer.bias[i] = uniform(rng, -bound, bound);
    layer.activation = last ? output : hidden;
    layers.push_back(std::move(layer));
  }
  return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t DenseNet::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
}

Vector DenseNet::forward(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != input_dim()) {
    throw DimensionError("network input has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(input_dim()));
  }
  Matrix a = x;
  for (const auto& layer : layers_) {
    Matrix z = layer.weight * a;
    z.colwise() += layer.bias;
    apply_activation(layer.activation, z);
    a = std::move(z);
  }
  return a.col(0);
}

Matrix DenseNet::forward_batch(const Matrix& batch) const {
  if (static_cast<std::size_t>(batch.rows()) != input_dim()) {
    throw DimensionError("network input has " + std::to_string(batch.rows()) + " rows, expected " +
                         std::to_string(input_dim()));
  }
  Matrix a = batch;
  for (const auto& layer : layers_) {
    Matrix z = layer.weight * a;
    z.colwise() += layer.bias;
    apply_activation(layer.activation, z);
    a = std::move(z);
  }
  return a;
}

Matrix DenseNet::forward_cached(const Matrix& batch) {
  if (static_cast<std::size_t>(batch.rows()) != input_dim()) {
    throw DimensionError("network input has " + std::to_string(batch.rows()) + " rows, expected " +
                         std::to_string(input_dim()));
  }
  cache_.clear();
  cache_.reserve(layers_.size() + 1);
  cache_.push_back(batch);
  for (const auto& layer : layers_) {
    Matrix z = layer.weight * cache_.back();
    z.colwise() += layer.bias;
    apply_activation(layer.activation, z);
    cache_.push_back(std::move(z));
  }
  return cache_.back();
}

NetGradients DenseNet::backward(const Matrix& upstream) const {
  if (cache_.empty()) throw Error("backward() called without a cached forward pass");
  const Matrix& out = cache_.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw DimensionError("upstream gradient shape does not match the cached output");
  }
  NetGradients g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());
  Matrix delta = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    scale_by_derivative(layers_[l].activation, cache_[l + 1], delta);
    g.weight[l].noalias() = delta * cache_[l].transpose();
    g.bias[l] = delta.rowwise().sum();
    delta = layers_[l].weight.transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  return n;
}

Vector DenseNet::parameters() const {
  Vector theta(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& layer : layers_) {
    theta.segment(k, layer.weight.size()) = layer.weight.reshaped();
    k += layer.weight.size();
    theta.segment(k, layer.bias.size()) = layer.bias;
    k += layer.bias.size();
  }
  return theta;
}

void DenseNet::set_parameters(const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count()) {
    throw DimensionError("parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (auto& layer : layers_) {
    layer.weight.reshaped() = theta.segment(k, layer.weight.size());
    k += layer.weight.size();
    layer.bias = theta.segment(k, layer.bias.size());
    k += layer.bias.size();
  }
}

void DenseNet::soft_update(const DenseNet& source, double tau) {
  if (source.layers_.size() != layers_.size()) throw DimensionError("soft update between different shapes");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight = tau * source.layers_[l].weight + (1.0 - tau) * layers_[l].weight;
    layers_[l].bias = tau * source.layers_[l].bias + (1.0 - tau) * layers_[l].bias;
  }
}

bool DenseNet::all_finite() const {
  for (const auto& layer : layers_) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

}  // namespace aegis::neuralctl
