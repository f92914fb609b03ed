#include "stlrl/stl/formula.hpp"

#include <algorithm>
#include <cmath>

#include "stlrl/stl/trace.hpp"

namespace stlrl::stl {

Expr Expr::constant(double v) {
  Expr e;
  e.kind = Kind::Constant;
  e.value = v;
  return e;
}

Expr Expr::signal(std::string name) {
  Expr e;
  e.kind = Kind::Signal;
  e.name = std::move(name);
  return e;
}

Expr Expr::param(std::string name) {
  Expr e;
  e.kind = Kind::Param;
  e.name = std::move(name);
  return e;
}

Expr Expr::unary(Kind k, Expr a) {
  Expr e;
  e.kind = k;
  e.args.push_back(std::move(a));
  return e;
}

Expr Expr::binary(Kind k, Expr a, Expr b) {
  Expr e;
  e.kind = k;
  e.args.push_back(std::move(a));
  e.args.push_back(std::move(b));
  return e;
}

Expr operator+(Expr a, Expr b) { return Expr::binary(Expr::Kind::Add, std::move(a), std::move(b)); }
Expr operator-(Expr a, Expr b) { return Expr::binary(Expr::Kind::Sub, std::move(a), std::move(b)); }
Expr operator*(Expr a, Expr b) { return Expr::binary(Expr::Kind::Mul, std::move(a), std::move(b)); }
Expr operator/(Expr a, Expr b) { return Expr::binary(Expr::Kind::Div, std::move(a), std::move(b)); }

Formula Formula::truth() { return Formula{}; }

Formula Formula::predicate(Expr lhs, Comparator cmp, Expr rhs) {
  Formula f;
  f.kind = Kind::Predicate;
  f.cmp = cmp;
  f.lhs = std::move(lhs);
  f.rhs = std::move(rhs);
  return f;
}

namespace {

Formula make(Formula::Kind k, std::vector<Formula> children, Interval i = {}) {
  Formula f;
  f.kind = k;
  f.children = std::move(children);
  f.interval = i;
  if (!(i.lo >= 0.0) || !(i.hi >= i.lo)) throw std::invalid_argument("interval must satisfy 0 <= lo <= hi");
  return f;
}

}  // namespace

Formula Formula::negation(Formula f) { return make(Kind::Not, {std::move(f)}); }
Formula Formula::conjunction(Formula a, Formula b) { return make(Kind::And, {std::move(a), std::move(b)}); }
Formula Formula::disjunction(Formula a, Formula b) { return make(Kind::Or, {std::move(a), std::move(b)}); }
Formula Formula::implication(Formula a, Formula b) { return make(Kind::Implies, {std::move(a), std::move(b)}); }
Formula Formula::eventually(Formula f, Interval i) { return make(Kind::Eventually, {std::move(f)}, i); }
Formula Formula::always(Formula f, Interval i) { return make(Kind::Always, {std::move(f)}, i); }
Formula Formula::until(Formula a, Formula b, Interval i) {
  return make(Kind::Until, {std::move(a), std::move(b)}, i);
}

namespace {

void collect(const Expr& e, Expr::Kind kind, std::vector<std::string>& out) {
  if (e.kind == kind && std::find(out.begin(), out.end(), e.name) == out.end()) out.push_back(e.name);
  for (const auto& a : e.args) collect(a, kind, out);
}

void collect(const Formula& f, Expr::Kind kind, std::vector<std::string>& out) {
  if (f.kind == Formula::Kind::Predicate) {
    collect(f.lhs, kind, out);
    collect(f.rhs, kind, out);
  }
  for (const auto& c : f.children) collect(c, kind, out);
}

}  // namespace

std::vector<std::string> free_parameters(const Formula& f) {
  std::vector<std::string> out;
  collect(f, Expr::Kind::Param, out);
  return out;
}

std::vector<std::string> free_parameters(const Expr& e) {
  std::vector<std::string> out;
  collect(e, Expr::Kind::Param, out);
  return out;
}

std::vector<std::string> signal_names(const Formula& f) {
  std::vector<std::string> out;
  collect(f, Expr::Kind::Signal, out);
  return out;
}

bool is_ground(const Formula& f) { return free_parameters(f).empty(); }

Expr valuate(const Expr& e, const Valuation& v) {
  if (e.kind == Expr::Kind::Param) {
    const auto it = v.find(e.name);
    if (it == v.end()) throw MissingParameter(e.name);
    if (!std::isfinite(it->second)) {
      throw std::invalid_argument("parameter '" + e.name + "' has a non-finite value");
    }
    return Expr::constant(it->second);
  }
  Expr out = e;
  for (auto& a : out.args) a = valuate(a, v);
  return out;
}

Formula valuate(const Formula& f, const Valuation& v) {
  Formula out = f;
  if (out.kind == Formula::Kind::Predicate) {
    out.lhs = valuate(f.lhs, v);
    out.rhs = valuate(f.rhs, v);
  }
  for (auto& c : out.children) c = valuate(c, v);
  return out;
}

namespace {

int precedence(Expr::Kind k) {
  switch (k) {
    case Expr::Kind::Add:
    case Expr::Kind::Sub:
      return 1;
    case Expr::Kind::Mul:
    case Expr::Kind::Div:
      return 2;
    case Expr::Kind::Neg:
      return 3;
    default:
      return 4;
  }
}

const char* binary_symbol(Expr::Kind k) {
  switch (k) {
    case Expr::Kind::Add:
      return " + ";
    case Expr::Kind::Sub:
      return " - ";
    case Expr::Kind::Mul:
      return " * ";
    default:
      return " / ";
  }
}

void print(const Expr& e, std::string& out) {
  switch (e.kind) {
    case Expr::Kind::Constant:
      out += format_real(e.value);
      return;
    case Expr::Kind::Signal:
    case Expr::Kind::Param:
      out += e.name;
      return;
    case Expr::Kind::Neg:
      out += "-(";
      print(e.args[0], out);
      out += ')';
      return;
    case Expr::Kind::Sqrt:
    case Expr::Kind::Square:
      out += e.kind == Expr::Kind::Sqrt ? "sqrt(" : "sq(";
      print(e.args[0], out);
      out += ')';
      return;
    default: {
      const int p = precedence(e.kind);
      const bool wrap_left = precedence(e.args[0].kind) < p;
      const bool wrap_right = precedence(e.args[1].kind) <= p;
      if (wrap_left) out += '(';
      print(e.args[0], out);
      if (wrap_left) out += ')';
      out += binary_symbol(e.kind);
      if (wrap_right) out += '(';
      print(e.args[1], out);
      if (wrap_right) out += ')';
      return;
    }
  }
}

std::string interval_text(const Interval& i) {
  if (i.unbounded_default()) return {};
  std::string s = "[" + format_real(i.lo) + ",";
  s += std::isinf(i.hi) ? std::string("inf") : format_real(i.hi);
  return s + "]";
}

void print(const Formula& f, std::string& out) {
  using K = Formula::Kind;
  switch (f.kind) {
    case K::True:
      out += "true";
      return;
    case K::Predicate:
      print(f.lhs, out);
      out += f.cmp == Comparator::Less ? " < " : " > ";
      print(f.rhs, out);
      return;
    case K::Not:
    case K::Eventually:
    case K::Always:
      out += f.kind == K::Not ? "not" : (f.kind == K::Always ? "G" : "F");
      out += interval_text(f.interval);
      out += '(';
      print(f.children[0], out);
      out += ')';
      return;
    case K::And:
    case K::Or:
    case K::Implies:
    case K::Until: {
      const char* op = f.kind == K::And ? ") and (" : f.kind == K::Or ? ") or (" : f.kind == K::Implies ? ") implies (" : nullptr;
      out += '(';
      print(f.children[0], out);
      if (op) {
        out += op;
      } else {
        out += ") U";
        out += interval_text(f.interval);
        out += " (";
      }
      print(f.children[1], out);
      out += ')';
      return;
    }
  }
}

}  // namespace

std::string to_string(const Expr& e) {
  std::string out;
  print(e, out);
  return out;
}

std::string to_string(const Formula& f) {
  std::string out;
  print(f, out);
  return out;
}

}  // namespace stlrl::stl
