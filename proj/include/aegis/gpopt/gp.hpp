#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "aegis/core/types.hpp"

namespace aegis::gpopt {

struct GpHyperparams {
  double lengthscale = 1.0;
  double signal_variance = 1.0;
  double noise_variance = 1e-6;

  /// Median pairwise distance for the lengthscale and the sample variance of
  /// y for the signal variance; degenerate values fall back to 1.
  static GpHyperparams from_data(const Matrix& X, const Vector& y, double noise_variance = 1e-6);
};

/// Isotropic Matern 5/2 kernel.
double matern52(double distance, double lengthscale, double signal_variance);

struct Prediction {
  double mean = 0.0;
  double std = 0.0;
};

/// Exact GP regression with a constant prior mean. Inputs are the rows of X.
class GaussianProcess {
 public:
  /// prior_mean defaults to mean(y). Jitter is added to the diagonal until the
  /// kernel matrix factors; NumericError if even the largest jitter fails.
  GaussianProcess(Matrix X, Vector y, GpHyperparams hp, std::optional<double> prior_mean = std::nullopt);

  Prediction predict(const Vector& x) const;
  /// One prediction per row of Xs.
  std::vector<Prediction> predict_batch(const Matrix& Xs) const;

  const GpHyperparams& hyperparams() const { return hp_; }
  double prior_mean() const { return mean0_; }
  /// Extra diagonal term that was needed on top of the noise variance.
  double jitter() const { return jitter_; }
  std::size_t size() const { return static_cast<std::size_t>(X_.rows()); }

  Matrix kernel(const Matrix& A, const Matrix& B) const;

 private:
  Matrix X_;
  Vector y_;
  GpHyperparams hp_;
  double mean0_ = 0.0;
  double jitter_ = 0.0;
  Matrix L_;
  Vector alpha_;
};

/// Minimization form: EI = (best - mu - xi) Phi(z) + sigma phi(z),
/// z = (best - mu - xi) / sigma. Never negative.
double expected_improvement(double mean, double std, double best, double xi);
double expected_improvement(const GaussianProcess& gp, const Vector& x, double best, double xi);

struct AcquisitionConfig {
  double xi = 0.01;
  std::size_t n_init = 10;
  std::size_t n_iter = 30;
  std::size_t candidates_per_step = 2048;

  std::size_t budget() const { return n_init + n_iter; }
  void validate() const;
};

struct Evaluation {
  Vector x;
  double y = 0.0;  // +inf when the objective returned a non-finite value
};

struct BoResult {
  Vector best_x;
  double best_y = 0.0;
  std::vector<Evaluation> evals;
};

using Objective = std::function<double(const Vector&)>;

/// Exactly cfg.n_init uniform samples followed by cfg.n_iter EI-maximizing
/// samples, all inside the box. Deterministic in the seed.
BoResult bo_minimize(const Objective& objective, const Box& box, const AcquisitionConfig& cfg,
                     std::uint64_t seed);

}  // namespace aegis::gpopt
