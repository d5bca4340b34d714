#pragma once

#include <vector>

#include "aegis/neuralctl/dense_net.hpp"

namespace aegis::neuralctl {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over the parameters of one DenseNet. step() descends along the
/// supplied gradients.
class Adam {
 public:
  Adam(const DenseNet& net, AdamConfig config);

  void step(DenseNet& net, const NetGradients& grads);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> mw_, vw_;
  std::vector<Vector> mb_, vb_;
  std::size_t t_ = 0;
};

}  // namespace aegis::neuralctl
