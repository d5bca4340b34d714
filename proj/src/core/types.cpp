#include "aegis/core/types.hpp"

#include <charconv>
#include <cmath>
#include <cstring>

#include "aegis/core/errors.hpp"

namespace aegis {

Box::Box(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size()) {
    throw DimensionError("box bounds have different dimensions");
  }
  for (Eigen::Index i = 0; i < lower_.size(); ++i) {
    if (!(lower_[i] <= upper_[i])) {
      throw ConfigError("box lower bound exceeds upper bound on dimension " + std::to_string(i));
    }
  }
}

Box Box::uniform(std::size_t dim, double lower, double upper) {
  const auto n = static_cast<Eigen::Index>(dim);
  return Box(Vector::Constant(n, lower), Vector::Constant(n, upper));
}

bool Box::contains(const Vector& x) const {
  if (x.size() != lower_.size()) return false;
  return (x.array() >= lower_.array()).all() && (x.array() <= upper_.array()).all();
}

Vector Box::clamp(const Vector& x) const {
  if (x.size() != lower_.size()) throw DimensionError("clamp: dimension mismatch");
  return x.cwiseMax(lower_).cwiseMin(upper_);
}

Vector Box::sample(Rng& rng) const {
  Vector x(lower_.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x[i] = lower_[i] < upper_[i] ? aegis::uniform(rng, lower_[i], upper_[i]) : lower_[i];
  }
  return x;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

bool bitwise_equal(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace aegis
