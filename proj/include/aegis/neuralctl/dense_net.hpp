#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "aegis/core/types.hpp"

namespace aegis::neuralctl {

enum class Activation { identity, relu, tanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// a = f(W x + b)
struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;
};

/// Parameter gradients laid out like the network, plus the gradient with
/// respect to the network input (one column per batch sample).
struct NetGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;

  void scale(double factor);
};

/// Fully connected feed-forward network. Batches are column-major: each
/// column of the input matrix is one sample.
class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  /// sizes = {in, h1, ..., out}. Hidden layers use fan-in uniform
  /// initialization; the output layer is drawn from U(-output_init, output_init).
  static DenseNet make(const std::vector<std::size_t>& sizes, Activation hidden, Activation output,
                       Rng& rng, double output_init = 3e-3);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  Vector forward(const Vector& x) const;
  Matrix forward_batch(const Matrix& batch) const;

  /// Forward pass that keeps the activations needed by backward().
  Matrix forward_cached(const Matrix& batch);
  bool has_cache() const { return !cache_.empty(); }
  void clear_cache() { cache_.clear(); }

  /// Reverse-mode gradients of sum_j upstream(:,j) . output(:,j) for the batch
  /// passed to the last forward_cached(). Throws if nothing is cached.
  NetGradients backward(const Matrix& upstream) const;

  std::size_t parameter_count() const;
  Vector parameters() const;
  void set_parameters(const Vector& theta);

  /// this <- tau * source + (1 - tau) * this
  void soft_update(const DenseNet& source, double tau);

  bool all_finite() const;

 private:
  std::vector<DenseLayer> layers_;
  // cache_[0] = input, cache_[l+1] = activation of layer l
  std::vector<Matrix> cache_;
};

}  // namespace aegis::neuralctl
