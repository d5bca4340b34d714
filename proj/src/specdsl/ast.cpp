#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include "aegis/core/errors.hpp"
#include "aegis/envsim/rollout.hpp"
#include "aegis/specdsl/spec.hpp"

namespace aegis::specdsl {

struct Term::Node {
  Kind kind;
  double value = 0.0;
  std::size_t index = 0;
  std::optional<Term> lhs;
  std::optional<Term> rhs;
};

Term Term::constant(double value) {
  if (!std::isfinite(value)) throw ConfigError("term constants must be finite");
  return Term(std::make_shared<const Node>(Node{Kind::constant, value, 0, {}, {}}));
}

Term Term::variable(std::size_t index) {
  return Term(std::make_shared<const Node>(Node{Kind::variable, 0.0, index, {}, {}}));
}

Term Term::add(Term lhs, Term rhs) {
  return Term(std::make_shared<const Node>(Node{Kind::add, 0.0, 0, std::move(lhs), std::move(rhs)}));
}

Term Term::sub(Term lhs, Term rhs) {
  return Term(std::make_shared<const Node>(Node{Kind::sub, 0.0, 0, std::move(lhs), std::move(rhs)}));
}

Term Term::mul(Term lhs, Term rhs) {
  if (!lhs.is_constant() && !rhs.is_constant()) {
    throw ConfigError("product of two state-dependent terms is outside the affine term language");
  }
  return Term(std::make_shared<const Node>(Node{Kind::mul, 0.0, 0, std::move(lhs), std::move(rhs)}));
}

Term Term::neg(Term operand) {
  return Term(std::make_shared<const Node>(Node{Kind::neg, 0.0, 0, std::move(operand), {}}));
}

Term Term::abs(Term operand) {
  return Term(std::make_shared<const Node>(Node{Kind::abs, 0.0, 0, std::move(operand), {}}));
}

Term::Kind Term::kind() const { return node_->kind; }
double Term::value() const { return node_->value; }
std::size_t Term::index() const { return node_->index; }
const Term& Term::lhs() const { return *node_->lhs; }
const Term& Term::rhs() const { return *node_->rhs; }

bool Term::is_constant() const { return required_dim() == 0; }

std::size_t Term::required_dim() const {
  switch (node_->kind) {
    case Kind::constant: return 0;
    case Kind::variable: return node_->index + 1;
    case Kind::neg:
    case Kind::abs: return node_->lhs->required_dim();
    default: return std::max(node_->lhs->required_dim(), node_->rhs->required_dim());
  }
}

double Term::eval(const State& s) const {
  switch (node_->kind) {
    case Kind::constant: return node_->value;
    case Kind::variable: return s[static_cast<Eigen::Index>(node_->index)];
    case Kind::add: return node_->lhs->eval(s) + node_->rhs->eval(s);
    case Kind::sub: return node_->lhs->eval(s) - node_->rhs->eval(s);
    case Kind::mul: return node_->lhs->eval(s) * node_->rhs->eval(s);
    case Kind::neg: return -node_->lhs->eval(s);
    case Kind::abs: return std::abs(node_->lhs->eval(s));
  }
  return 0.0;
}

bool operator==(const Term& a, const Term& b) {
  if (a.node_ == b.node_) return true;
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case Term::Kind::constant: return a.value() == b.value();
    case Term::Kind::variable: return a.index() == b.index();
    case Term::Kind::neg:
    case Term::Kind::abs: return a.lhs() == b.lhs();
    default: return a.lhs() == b.lhs() && a.rhs() == b.rhs();
  }
}

std::string_view to_string(Comparison op) {
  switch (op) {
    case Comparison::eq: return "=";
    case Comparison::ne: return "!=";
    case Comparison::le: return "<=";
    case Comparison::lt: return "<";
    case Comparison::ge: return ">=";
    case Comparison::gt: return ">";
  }
  return "?";
}

Formula Formula::atom(Predicate p) {
  Formula f;
  f.kind_ = Kind::predicate;
  f.predicate_ = std::move(p);
  return f;
}

namespace {

Formula make_nary(Formula::Kind kind, std::vector<Formula> children) {
  if (children.empty()) throw ConfigError("connective needs at least one operand");
  std::vector<Formula> flat;
  for (auto& c : children) {
    if (c.kind() == kind) {
      flat.insert(flat.end(), c.children().begin(), c.children().end());
    } else {
      flat.push_back(std::move(c));
    }
  }
  if (flat.size() == 1) return flat.front();
  return kind == Formula::Kind::conjunction ? Formula::conjunction(std::move(flat))
                                            : Formula::disjunction(std::move(flat));
}

}  // namespace

Formula Formula::conjunction(std::vector<Formula> children) {
  bool nested = std::any_of(children.begin(), children.end(),
                            [](const Formula& c) { return c.kind() == Kind::conjunction; });
  if (nested || children.size() < 2) return make_nary(Kind::conjunction, std::move(children));
  Formula f;
  f.kind_ = Kind::conjunction;
  f.children_ = std::move(children);
  return f;
}

Formula Formula::disjunction(std::vector<Formula> children) {
  bool nested = std::any_of(children.begin(), children.end(),
                            [](const Formula& c) { return c.kind() == Kind::disjunction; });
  if (nested || children.size() < 2) return make_nary(Kind::disjunction, std::move(children));
  Formula f;
  f.kind_ = Kind::disjunction;
  f.children_ = std::move(children);
  return f;
}

std::size_t Formula::required_dim() const {
  if (kind_ == Kind::predicate) {
    return std::max(predicate_->lhs.required_dim(), predicate_->rhs.required_dim());
  }
  std::size_t d = 0;
  for (const auto& c : children_) d = std::max(d, c.required_dim());
  return d;
}

std::size_t Formula::depth() const {
  if (kind_ == Kind::predicate) return 1;
  std::size_t d = 0;
  for (const auto& c : children_) d = std::max(d, c.depth());
  return d + 1;
}

// ---------------------------------------------------------------------------
// semantics

namespace {

// L(t < t') = t' - t ; L(t = t') = delta [t = t'] ; the remaining comparisons
// are the rewrites  t != t' = t < t' | t > t',  t <= t' = t < t' | t = t'.
double predicate_reward(const Predicate& p, const State& s, double delta) {
  const double a = p.lhs.eval(s);
  const double b = p.rhs.eval(s);
  const double eq = a == b ? delta : 0.0;
  switch (p.op) {
    case Comparison::lt: return b - a;
    case Comparison::gt: return a - b;
    case Comparison::eq: return eq;
    case Comparison::ne: return std::max(b - a, a - b);
    case Comparison::le: return std::max(b - a, eq);
    case Comparison::ge: return std::max(a - b, eq);
  }
  return 0.0;
}

bool predicate_holds(const Predicate& p, const State& s) {
  const double a = p.lhs.eval(s);
  const double b = p.rhs.eval(s);
  switch (p.op) {
    case Comparison::lt: return a < b;
    case Comparison::gt: return a > b;
    case Comparison::eq: return a == b;
    case Comparison::ne: return a != b;
    case Comparison::le: return a <= b;
    case Comparison::ge: return a >= b;
  }
  return false;
}

double formula_reward(const Formula& f, const State& s, double delta) {
  switch (f.kind()) {
    case Formula::Kind::predicate: return predicate_reward(f.predicate(), s, delta);
    case Formula::Kind::conjunction: {
      double r = std::numeric_limits<double>::infinity();
      for (const auto& c : f.children()) r = std::min(r, formula_reward(c, s, delta));
      return r;
    }
    case Formula::Kind::disjunction: {
      double r = -std::numeric_limits<double>::infinity();
      for (const auto& c : f.children()) r = std::max(r, formula_reward(c, s, delta));
      return r;
    }
  }
  return 0.0;
}

bool formula_holds(const Formula& f, const State& s) {
  switch (f.kind()) {
    case Formula::Kind::predicate: return predicate_holds(f.predicate(), s);
    case Formula::Kind::conjunction:
      return std::all_of(f.children().begin(), f.children().end(),
                         [&](const Formula& c) { return formula_holds(c, s); });
    case Formula::Kind::disjunction:
      return std::any_of(f.children().begin(), f.children().end(),
                         [&](const Formula& c) { return formula_holds(c, s); });
  }
  return false;
}

}  // namespace

SafetySpec::SafetySpec(Formula root, double delta)
    : root_(std::move(root)), delta_(delta), required_dim_(root_.required_dim()) {
  if (!(delta_ > 0.0) || !std::isfinite(delta_)) throw ConfigError("spec delta must be positive");
}

SafetySpec SafetySpec::bind(std::size_t state_dim) const {
  if (required_dim_ > state_dim) {
    throw DimensionError("spec references x" + std::to_string(required_dim_ - 1) +
                         " but the state has " + std::to_string(state_dim) + " dimensions");
  }
  SafetySpec copy = *this;
  copy.bound_dim_ = state_dim;
  return copy;
}

void SafetySpec::check_dim(const State& s) const {
  const auto n = static_cast<std::size_t>(s.size());
  if (bound_dim_ ? n != *bound_dim_ : n < required_dim_) {
    throw DimensionError("spec evaluated on a state of dimension " + std::to_string(n));
  }
}

bool SafetySpec::holds(const State& s) const {
  check_dim(s);
  return formula_holds(root_, s);
}

double SafetySpec::reward(const State& s) const {
  check_dim(s);
  return formula_reward(root_, s, delta_);
}

double SafetySpec::reward(const envsim::Trajectory& traj) const {
  if (traj.states.empty()) throw ConfigError("safety reward of an empty trajectory");
  double r = std::numeric_limits<double>::infinity();
  for (const auto& s : traj.states) r = std::min(r, reward(s));
  return r;
}

double safety_reward_traj(const SafetySpec& spec, const envsim::Trajectory& traj) {
  return spec.reward(traj);
}

// ---------------------------------------------------------------------------
// printing

namespace {

std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

int precedence(const Term& t) {
  switch (t.kind()) {
    case Term::Kind::add:
    case Term::Kind::sub: return 1;
    case Term::Kind::mul: return 2;
    case Term::Kind::neg: return 3;
    case Term::Kind::constant: return t.value() < 0.0 ? 3 : 4;
    default: return 4;
  }
}

void print_term(std::string& out, const Term& t);

void print_operand(std::string& out, const Term& t, int min_prec) {
  if (precedence(t) < min_prec) {
    out += '(';
    print_term(out, t);
    out += ')';
  } else {
    print_term(out, t);
  }
}

void print_term(std::string& out, const Term& t) {
  switch (t.kind()) {
    case Term::Kind::constant: out += format_number(t.value()); break;
    case Term::Kind::variable: out += "x" + std::to_string(t.index()); break;
    case Term::Kind::abs:
      out += "abs(";
      print_term(out, t.lhs());
      out += ')';
      break;
    case Term::Kind::neg:
      out += '-';
      // "-2" would reparse as the constant -2, not neg(2)
      if (t.lhs().kind() == Term::Kind::constant) {
        out += "(" + format_number(t.lhs().value()) + ")";
      } else {
        print_operand(out, t.lhs(), 4);
      }
      break;
    case Term::Kind::add:
    case Term::Kind::sub:
      print_operand(out, t.lhs(), 1);
      out += t.kind() == Term::Kind::add ? " + " : " - ";
      print_operand(out, t.rhs(), 2);
      break;
    case Term::Kind::mul:
      print_operand(out, t.lhs(), 2);
      out += " * ";
      print_operand(out, t.rhs(), 3);
      break;
  }
}

}  // namespace

std::string to_string(const Term& t) {
  std::string out;
  print_term(out, t);
  return out;
}

std::string to_string(const Formula& f) {
  switch (f.kind()) {
    case Formula::Kind::predicate: {
      const auto& p = f.predicate();
      return to_string(p.lhs) + " " + std::string(to_string(p.op)) + " " + to_string(p.rhs);
    }
    case Formula::Kind::conjunction: {
      std::string out;
      for (std::size_t i = 0; i < f.children().size(); ++i) {
        const auto& c = f.children()[i];
        if (i > 0) out += " & ";
        if (c.kind() == Formula::Kind::disjunction) {
          out += "(" + to_string(c) + ")";
        } else {
          out += to_string(c);
        }
      }
      return out;
    }
    case Formula::Kind::disjunction: {
      std::string out;
      for (std::size_t i = 0; i < f.children().size(); ++i) {
        if (i > 0) out += " | ";
        out += to_string(f.children()[i]);
      }
      return out;
    }
  }
  return {};
}

std::string SafetySpec::to_string() const { return specdsl::to_string(root_); }

}  // namespace aegis::specdsl
