#pragma once

// Random safety specifications for property tests.

#include "aegis/core/random.hpp"
#include "aegis/specdsl/spec.hpp"

namespace aegis::test {

inline specdsl::Term random_term(Rng& rng, std::size_t dim, int depth) {
  using specdsl::Term;
  const int pick = static_cast<int>(uniform_index(rng, depth <= 0 ? 2 : 6));
  switch (pick) {
    case 0: return Term::constant(std::round(uniform(rng, -2.0, 2.0) * 100.0) / 100.0);
    case 1: return Term::variable(uniform_index(rng, dim));
    case 2: return Term::add(random_term(rng, dim, depth - 1), random_term(rng, dim, depth - 1));
    case 3: return Term::sub(random_term(rng, dim, depth - 1), random_term(rng, dim, depth - 1));
    case 4: return Term::mul(Term::constant(uniform(rng, -3.0, 3.0)), random_term(rng, dim, depth - 1));
    default: return Term::abs(random_term(rng, dim, depth - 1));
  }
}

inline specdsl::Formula random_formula(Rng& rng, std::size_t dim, int depth) {
  using specdsl::Formula;
  if (depth <= 1 || uniform(rng, 0.0, 1.0) < 0.3) {
    const auto op = static_cast<specdsl::Comparison>(uniform_index(rng, 6));
    return Formula::atom({random_term(rng, dim, 2), op, random_term(rng, dim, 2)});
  }
  const std::size_t n = 2 + uniform_index(rng, 2);
  std::vector<Formula> children;
  for (std::size_t i = 0; i < n; ++i) children.push_back(random_formula(rng, dim, depth - 1));
  return uniform(rng, 0.0, 1.0) < 0.5 ? Formula::conjunction(std::move(children))
                                      : Formula::disjunction(std::move(children));
}

/// True if any predicate in f has both sides exactly equal at s.
inline bool touches_boundary(const specdsl::Formula& f, const State& s) {
  if (f.kind() == specdsl::Formula::Kind::predicate) {
    return f.predicate().lhs.eval(s) == f.predicate().rhs.eval(s);
  }
  for (const auto& c : f.children()) {
    if (touches_boundary(c, s)) return true;
  }
  return false;
}

}  // namespace aegis::test
