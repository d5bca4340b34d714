#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aegis/core/random.hpp"

namespace aegis {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Plant state; dimension fixed per environment, entries finite.
using State = Eigen::VectorXd;
/// Actuator command; dimension fixed per environment.
using Action = Eigen::VectorXd;

/// Axis-aligned box given by per-dimension closed intervals.
class Box {
 public:
  Box() = default;
  Box(Vector lower, Vector upper);

  /// Same interval on every dimension.
  static Box uniform(std::size_t dim, double lower, double upper);

  std::size_t dim() const { return static_cast<std::size_t>(lower_.size()); }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  Vector width() const { return upper_ - lower_; }
  Vector center() const { return 0.5 * (lower_ + upper_); }

  bool contains(const Vector& x) const;
  Vector clamp(const Vector& x) const;
  /// Uniform per dimension; collapsed intervals return their single point.
  Vector sample(Rng& rng) const;

 private:
  Vector lower_;
  Vector upper_;
};

bool all_finite(const Vector& v);

/// Bitwise equality, used where deduplication must be exact.
bool bitwise_equal(const Vector& a, const Vector& b);

std::vector<double> to_std(const Vector& v);
Vector from_std(const std::vector<double>& v);

/// Shortest text that parses back to the same double ("nan", "inf" otherwise).
std::string format_double(double x);

}  // namespace aegis
