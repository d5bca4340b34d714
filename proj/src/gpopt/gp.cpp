#include "aegis/gpopt/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "aegis/core/errors.hpp"

namespace aegis::gpopt {

namespace {

const double kSqrt5 = std::sqrt(5.0);

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

GpHyperparams GpHyperparams::from_data(const Matrix& X, const Vector& y, double noise_variance) {
  GpHyperparams hp;
  hp.noise_variance = noise_variance;
  std::vector<double> dists;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < X.rows(); ++j) dists.push_back((X.row(i) - X.row(j)).norm());
  }
  const double ell = median(std::move(dists));
  hp.lengthscale = (std::isfinite(ell) && ell > 0.0) ? ell : 1.0;
  double var = 0.0;
  if (y.size() > 1) {
    const double mu = y.mean();
    var = (y.array() - mu).square().sum() / static_cast<double>(y.size() - 1);
  }
  hp.signal_variance = (std::isfinite(var) && var > 0.0) ? var : 1.0;
  return hp;
}

double matern52(double distance, double lengthscale, double signal_variance) {
  const double r = kSqrt5 * distance / lengthscale;
  return signal_variance * (1.0 + r + r * r / 3.0) * std::exp(-r);
}

GaussianProcess::GaussianProcess(Matrix X, Vector y, GpHyperparams hp, std::optional<double> prior_mean)
    : X_(std::move(X)), y_(std::move(y)), hp_(hp) {
  if (X_.rows() == 0) throw ConfigError("GP needs at least one training point");
  if (X_.rows() != y_.size()) throw DimensionError("GP inputs and targets differ in count");
  if (!y_.allFinite() || !X_.allFinite()) throw NumericError("GP training data must be finite");
  if (!(hp_.lengthscale > 0.0) || !(hp_.signal_variance > 0.0) || !(hp_.noise_variance >= 0.0)) {
    throw ConfigError("GP hyperparameters must be positive");
  }
  mean0_ = prior_mean.value_or(y_.mean());

  const Matrix K = kernel(X_, X_);
  const auto n = X_.rows();
  // A pivot this small relative to the signal variance means the factor is
  // numerically meaningless even if LLT reports success.
  const double min_pivot = 1e-7 * std::sqrt(hp_.signal_variance);
  for (double jitter = 0.0;; jitter = jitter == 0.0 ? 1e-12 * hp_.signal_variance : jitter * 10.0) {
    if (jitter > 1e-2 * hp_.signal_variance) {
      throw NumericError("GP kernel matrix is not positive definite even with jitter");
    }
    Matrix Kn = K;
    Kn.diagonal().array() += hp_.noise_variance + jitter;
    Eigen::LLT<Matrix> llt(Kn);
    if (llt.info() != Eigen::Success) continue;
    Matrix L = llt.matrixL();
    if (n > 0 && L.diagonal().minCoeff() < min_pivot) continue;
    jitter_ = jitter;
    L_ = std::move(L);
    break;
  }
  alpha_ = L_.transpose().triangularView<Eigen::Upper>().solve(
      L_.triangularView<Eigen::Lower>().solve(Vector(y_.array() - mean0_)));
}

Matrix GaussianProcess::kernel(const Matrix& A, const Matrix& B) const {
  Matrix K(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      K(i, j) = matern52((A.row(i) - B.row(j)).norm(), hp_.lengthscale, hp_.signal_variance);
    }
  }
  return K;
}

Prediction GaussianProcess::predict(const Vector& x) const {
  if (x.size() != X_.cols()) throw DimensionError("GP query has the wrong dimension");
  return predict_batch(Matrix(x.transpose())).front();
}

std::vector<Prediction> GaussianProcess::predict_batch(const Matrix& Xs) const {
  if (Xs.cols() != X_.cols()) throw DimensionError("GP query has the wrong dimension");
  const Matrix Ks = kernel(X_, Xs);  // n x m
  const Vector mean = (Ks.transpose() * alpha_).array() + mean0_;
  const Matrix V = L_.triangularView<Eigen::Lower>().solve(Ks);
  const Vector reduction = V.colwise().squaredNorm().transpose();
  std::vector<Prediction> out(static_cast<std::size_t>(Xs.rows()));
  for (Eigen::Index i = 0; i < Xs.rows(); ++i) {
    const double var = hp_.signal_variance - reduction[i];
    out[static_cast<std::size_t>(i)] = {mean[i], std::sqrt(std::max(var, 0.0))};
  }
  return out;
}

double expected_improvement(double mean, double std, double best, double xi) {
  const double gain = best - mean - xi;
  if (!(std > 0.0)) return std::max(gain, 0.0);
  const double z = gain / std;
  return std::max(gain * normal_cdf(z) + std * normal_pdf(z), 0.0);
}

double expected_improvement(const GaussianProcess& gp, const Vector& x, double best, double xi) {
  const auto p = gp.predict(x);
  return expected_improvement(p.mean, p.std, best, xi);
}

void AcquisitionConfig::validate() const {
  if (!(xi >= 0.0)) throw ConfigError("xi must be non-negative");
  if (n_init < 1 || n_iter < 1) throw ConfigError("n_init and n_iter must be at least 1");
  if (candidates_per_step < 1) throw ConfigError("candidates_per_step must be at least 1");
}

BoResult bo_minimize(const Objective& objective, const Box& box, const AcquisitionConfig& cfg,
                     std::uint64_t seed) {
  cfg.validate();
  if (box.dim() == 0) throw ConfigError("BO box has no dimensions");
  if (!((box.width().array() > 0.0).all())) throw ConfigError("BO box must be non-degenerate");
  Rng rng(seed);
  BoResult res;
  res.best_y = std::numeric_limits<double>::infinity();
  res.evals.reserve(cfg.budget());

  const auto evaluate = [&](const Vector& x) {
    double y = objective(x);
    if (!std::isfinite(y)) y = std::numeric_limits<double>::infinity();
    res.evals.push_back({x, y});
    if (res.best_x.size() == 0 || y < res.best_y) {
      res.best_y = y;
      res.best_x = x;
    }
  };

  for (std::size_t i = 0; i < cfg.n_init; ++i) evaluate(box.sample(rng));

  const auto d = static_cast<Eigen::Index>(box.dim());
  const auto finite_data = [&](Matrix& X, Vector& y) {
    std::size_t count = 0;
    for (const auto& e : res.evals) count += std::isfinite(e.y) ? 1 : 0;
    X.resize(static_cast<Eigen::Index>(count), d);
    y.resize(static_cast<Eigen::Index>(count));
    Eigen::Index r = 0;
    for (const auto& e : res.evals) {
      if (!std::isfinite(e.y)) continue;
      X.row(r) = e.x.transpose();
      y[r++] = e.y;
    }
  };

  Matrix X;
  Vector y;
  finite_data(X, y);
  const GpHyperparams hp = GpHyperparams::from_data(X, y);
  const auto m = static_cast<Eigen::Index>(cfg.candidates_per_step);
  Matrix cand(m, d);

  for (std::size_t it = 0; it < cfg.n_iter; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) cand.row(i) = box.sample(rng).transpose();
    finite_data(X, y);
    if (X.rows() == 0) {
      // nothing to model yet; keep exploring
      evaluate(cand.row(0).transpose());
      continue;
    }
    const GaussianProcess gp(X, y, hp);
    const double best = y.minCoeff();
    const auto preds = gp.predict_batch(cand);
    Eigen::Index arg = 0;
    double top = -1.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& p = preds[static_cast<std::size_t>(i)];
      const double ei = expected_improvement(p.mean, p.std, best, cfg.xi);
      if (ei > top) {
        top = ei;
        arg = i;
      }
    }
    evaluate(cand.row(arg).transpose());
  }
  return res;
}

}  // namespace aegis::gpopt
