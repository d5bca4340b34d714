#include "aegis/neuralctl/adam.hpp"

#include <cmath>

#include "aegis/core/errors.hpp"

namespace aegis::neuralctl {

Adam::Adam(const DenseNet& net, AdamConfig config) : cfg_(config) {
  if (!(cfg_.learning_rate > 0.0) || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) ||
      !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) || !(cfg_.epsilon > 0.0)) {
    throw ConfigError("invalid Adam settings");
  }
  for (const auto& layer : net.layers()) {
    mw_.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    vw_.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    mb_.push_back(Vector::Zero(layer.bias.size()));
    vb_.push_back(Vector::Zero(layer.bias.size()));
  }
}

void Adam::step(DenseNet& net, const NetGradients& grads) {
  auto& layers = net.mutable_layers();
  if (grads.weight.size() != layers.size() || layers.size() != mw_.size()) {
    throw DimensionError("gradient layout does not match the optimized network");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double lr = cfg_.learning_rate * std::sqrt(c2) / c1;
  // eps is rescaled so the update equals the textbook lr * m_hat / (sqrt(v_hat) + eps)
  const double eps = cfg_.epsilon * std::sqrt(c2);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    mw_[l] = cfg_.beta1 * mw_[l] + (1.0 - cfg_.beta1) * grads.weight[l];
    vw_[l] = cfg_.beta2 * vw_[l] + (1.0 - cfg_.beta2) * grads.weight[l].cwiseAbs2();
    layers[l].weight.array() -= lr * mw_[l].array() / (vw_[l].array().sqrt() + eps);
    mb_[l] = cfg_.beta1 * mb_[l] + (1.0 - cfg_.beta1) * grads.bias[l];
    vb_[l] = cfg_.beta2 * vb_[l] + (1.0 - cfg_.beta2) * grads.bias[l].cwiseAbs2();
    layers[l].bias.array() -= lr * mb_[l].array() / (vb_[l].array().sqrt() + eps);
  }
}

}  // namespace aegis::neuralctl
