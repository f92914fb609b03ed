#pragma once

#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlrl::stl {

class MissingParameter : public std::runtime_error {
 public:
  explicit MissingParameter(std::string name)
      : std::runtime_error("missing value for parameter '" + name + "'"), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

/// Division by zero or sqrt of a negative number while evaluating an atom.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arithmetic over signal dimensions, constants and free parameters.
struct Expr {
  enum class Kind { Constant, Signal, Param, Add, Sub, Mul, Div, Neg, Sqrt, Square };

  Kind kind = Kind::Constant;
  double value = 0.0;
  std::string name;
  std::vector<Expr> args;

  static Expr constant(double v);
  static Expr signal(std::string name);
  static Expr param(std::string name);
  static Expr unary(Kind k, Expr a);
  static Expr binary(Kind k, Expr a, Expr b);

  bool operator==(const Expr&) const = default;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);

enum class Comparator { Less, Greater };

/// Closed time interval in seconds; hi may be +inf.
struct Interval {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();

  bool unbounded_default() const { return lo == 0.0 && hi == std::numeric_limits<double>::infinity(); }
  bool operator==(const Interval&) const = default;
};

struct Formula {
  enum class Kind { True, Predicate, Not, And, Or, Implies, Eventually, Always, Until };

  Kind kind = Kind::True;
  Comparator cmp = Comparator::Greater;
  Expr lhs;
  Expr rhs;
  Interval interval;
  std::vector<Formula> children;

  static Formula truth();
  static Formula predicate(Expr lhs, Comparator cmp, Expr rhs);
  static Formula negation(Formula f);
  static Formula conjunction(Formula a, Formula b);
  static Formula disjunction(Formula a, Formula b);
  static Formula implication(Formula a, Formula b);
  static Formula eventually(Formula f, Interval i = {});
  static Formula always(Formula f, Interval i = {});
  static Formula until(Formula a, Formula b, Interval i = {});

  bool operator==(const Formula&) const = default;
};

using Valuation = std::map<std::string, double>;

/// Parameter names in order of first appearance (left-to-right, depth-first).
std::vector<std::string> free_parameters(const Formula& f);
std::vector<std::string> free_parameters(const Expr& e);

/// Signal dimension names referenced anywhere in the formula, first appearance order.
std::vector<std::string> signal_names(const Formula& f);

bool is_ground(const Formula& f);

/// Substitutes every parameter reference with a constant. Throws
/// MissingParameter naming the first unbound parameter.
Formula valuate(const Formula& f, const Valuation& v);
Expr valuate(const Expr& e, const Valuation& v);

/// Canonical concrete syntax; parse(to_string(f)) == f.
std::string to_string(const Formula& f);
std::string to_string(const Expr& e);

}  // namespace stlrl::stl
