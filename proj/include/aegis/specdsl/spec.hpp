#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aegis/core/types.hpp"

namespace aegis::envsim {
struct Trajectory;
}

namespace aegis::specdsl {

/// Real-valued expression over state variables x0..x{n-1}: constants, +, -,
/// scalar multiplication, negation and absolute value.
class Term {
 public:
  enum class Kind { constant, variable, add, sub, mul, neg, abs };

  static Term constant(double value);
  static Term variable(std::size_t index);
  static Term add(Term lhs, Term rhs);
  static Term sub(Term lhs, Term rhs);
  /// At least one factor must be variable-free (terms stay affine up to abs).
  static Term mul(Term lhs, Term rhs);
  static Term neg(Term operand);
  static Term abs(Term operand);

  Kind kind() const;
  double value() const;       // constant
  std::size_t index() const;  // variable
  const Term& lhs() const;    // binary, or the operand of neg/abs
  const Term& rhs() const;    // binary

  bool is_constant() const;
  /// Largest referenced variable index + 1 (0 for constant terms).
  std::size_t required_dim() const;
  double eval(const State& s) const;

  friend bool operator==(const Term& a, const Term& b);

 private:
  struct Node;
  explicit Term(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

enum class Comparison { eq, ne, le, lt, ge, gt };

std::string_view to_string(Comparison op);

struct Predicate {
  Term lhs;
  Comparison op;
  Term rhs;

  friend bool operator==(const Predicate&, const Predicate&) = default;
};

/// phi := rho | phi & phi | phi | phi. Conjunctions and disjunctions are
/// stored n-ary and flattened, so (a & b) & c and a & (b & c) coincide.
class Formula {
 public:
  enum class Kind { predicate, conjunction, disjunction };

  static Formula atom(Predicate p);
  static Formula conjunction(std::vector<Formula> children);
  static Formula disjunction(std::vector<Formula> children);

  Kind kind() const { return kind_; }
  const Predicate& predicate() const { return *predicate_; }
  const std::vector<Formula>& children() const { return children_; }
  std::size_t required_dim() const;
  std::size_t depth() const;

  friend bool operator==(const Formula&, const Formula&) = default;

 private:
  Kind kind_ = Kind::predicate;
  std::optional<Predicate> predicate_;
  std::vector<Formula> children_;
};

/// A parsed safety specification together with the equality reward constant
/// delta. Immutable; evaluation is pure.
class SafetySpec {
 public:
  static constexpr double kDefaultDelta = 1e-3;

  explicit SafetySpec(Formula root, double delta = kDefaultDelta);

  const Formula& root() const { return root_; }
  double delta() const { return delta_; }
  std::size_t required_dim() const { return required_dim_; }
  const std::optional<std::size_t>& bound_dim() const { return bound_dim_; }

  /// Returns a copy checked against, and bound to, the given state dimension.
  SafetySpec bind(std::size_t state_dim) const;

  bool holds(const State& s) const;
  /// Quantitative safety reward L(phi)(s); positive iff the spec holds.
  double reward(const State& s) const;
  /// min over the trajectory of reward(s).
  double reward(const envsim::Trajectory& traj) const;

  /// Parseable text; parse(to_string()) is structurally identical.
  std::string to_string() const;

 private:
  void check_dim(const State& s) const;

  Formula root_;
  double delta_;
  std::size_t required_dim_;
  std::optional<std::size_t> bound_dim_;
};

/// Grammar: identifiers x0..x{n-1}, `abs(...)`, numbers, + - *, comparisons
/// `< <= > >= = !=`, `&` for conjunction, `|` for disjunction, parentheses.
/// Precedence: comparison > & > |. Throws ParseError with line/column.
/// When state_dim is given, variables with index >= state_dim are rejected.
SafetySpec parse_spec(std::string_view text, double delta = SafetySpec::kDefaultDelta,
                      std::optional<std::size_t> state_dim = std::nullopt);

std::string to_string(const Term& t);
std::string to_string(const Formula& f);

// Free-function forms of the semantics.
inline bool holds(const SafetySpec& spec, const State& s) { return spec.holds(s); }
inline double safety_reward_state(const SafetySpec& spec, const State& s) { return spec.reward(s); }
double safety_reward_traj(const SafetySpec& spec, const envsim::Trajectory& traj);

}  // namespace aegis::specdsl
