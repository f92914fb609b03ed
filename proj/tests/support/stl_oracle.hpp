#pragma once

// Test-only reference evaluators for STL. Written directly from the
// per-time-point semantics table, one recursive call per (formula, time),
// without sharing code with the library evaluator.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "stlrl/stl/formula.hpp"
#include "stlrl/stl/trace.hpp"

namespace stlrl::testing {

using stl::Expr;
using stl::Formula;
using stl::Trace;

inline double oracle_expr(const Expr& e, const Trace& tr, std::size_t t) {
  switch (e.kind) {
    case Expr::Kind::Constant: return e.value;
    case Expr::Kind::Signal: {
      for (std::size_t i = 0; i < tr.dims().size(); ++i) {
        if (tr.dims()[i] == e.name) return tr.sample(t)[i];
      }
      throw std::invalid_argument("oracle: missing dim");
    }
    case Expr::Kind::Param: throw std::invalid_argument("oracle: unbound parameter");
    case Expr::Kind::Add: return oracle_expr(e.args[0], tr, t) + oracle_expr(e.args[1], tr, t);
    case Expr::Kind::Sub: return oracle_expr(e.args[0], tr, t) - oracle_expr(e.args[1], tr, t);
    case Expr::Kind::Mul: return oracle_expr(e.args[0], tr, t) * oracle_expr(e.args[1], tr, t);
    case Expr::Kind::Div: return oracle_expr(e.args[0], tr, t) / oracle_expr(e.args[1], tr, t);
    case Expr::Kind::Neg: return -oracle_expr(e.args[0], tr, t);
    case Expr::Kind::Sqrt: return std::sqrt(oracle_expr(e.args[0], tr, t));
    case Expr::Kind::Square: {
      const double v = oracle_expr(e.args[0], tr, t);
      return v * v;
    }
  }
  return 0.0;
}

// Sample indices t' with t+a <= t' <= t+b under floor(a/dt), ceil(b/dt).
inline std::vector<std::size_t> oracle_window(const stl::Interval& iv, double dt, std::size_t t, std::size_t n) {
  const double eps = 1e-9;
  const long long a = static_cast<long long>(std::floor(iv.lo / dt + eps));
  const long long b = std::isinf(iv.hi) ? static_cast<long long>(n) : static_cast<long long>(std::ceil(iv.hi / dt - eps));
  std::vector<std::size_t> out;
  for (long long k = static_cast<long long>(t) + a; k <= static_cast<long long>(t) + std::max(a, b); ++k) {
    if (k >= 0 && k < static_cast<long long>(n)) out.push_back(static_cast<std::size_t>(k));
  }
  return out;
}

/// Recursive evaluation of one (formula, time) pair at a time, memoized per
/// node so deeply nested temporal operators stay tractable.
class Oracle {
 public:
  explicit Oracle(const Trace& tr) : tr_(tr) {}

  double rho(const Formula& f, std::size_t t) {
    auto& slot = rho_memo_[&f];
    if (slot.empty()) slot.assign(tr_.size(), std::nullopt);
    if (!slot[t]) slot[t] = rho_uncached(f, t);
    return *slot[t];
  }

  bool sat(const Formula& f, std::size_t t) {
    auto& slot = sat_memo_[&f];
    if (slot.empty()) slot.assign(tr_.size(), -1);
    if (slot[t] < 0) slot[t] = sat_uncached(f, t) ? 1 : 0;
    return slot[t] == 1;
  }

 private:
  double rho_uncached(const Formula& f, std::size_t t) {
    const double inf = std::numeric_limits<double>::infinity();
    using K = Formula::Kind;
    switch (f.kind) {
      case K::True: return inf;
      case K::Predicate: {
        const double l = oracle_expr(f.lhs, tr_, t);
        const double r = oracle_expr(f.rhs, tr_, t);
        return f.cmp == stl::Comparator::Greater ? l - r : r - l;
      }
      case K::Not: return -rho(f.children[0], t);
      case K::And: return std::min(rho(f.children[0], t), rho(f.children[1], t));
      case K::Or: return std::max(rho(f.children[0], t), rho(f.children[1], t));
      case K::Implies: return std::max(-rho(f.children[0], t), rho(f.children[1], t));
      case K::Eventually: {
        double best = -inf;
        for (auto tp : oracle_window(f.interval, tr_.dt(), t, tr_.size())) best = std::max(best, rho(f.children[0], tp));
        return best;
      }
      case K::Always: {
        double worst = inf;
        for (auto tp : oracle_window(f.interval, tr_.dt(), t, tr_.size())) worst = std::min(worst, rho(f.children[0], tp));
        return worst;
      }
      case K::Until: {
        double best = -inf;
        for (auto tp : oracle_window(f.interval, tr_.dt(), t, tr_.size())) {
          double inner = rho(f.children[1], tp);
          for (std::size_t tpp = t; tpp <= tp; ++tpp) inner = std::min(inner, rho(f.children[0], tpp));
          best = std::max(best, inner);
        }
        return best;
      }
    }
    return 0.0;
  }

  bool sat_uncached(const Formula& f, std::size_t t) {
    using K = Formula::Kind;
    switch (f.kind) {
      case K::True: return true;
      case K::Predicate: {
        const double l = oracle_expr(f.lhs, tr_, t);
        const double r = oracle_expr(f.rhs, tr_, t);
        return f.cmp == stl::Comparator::Greater ? l > r : l < r;
      }
      case K::Not: return !sat(f.children[0], t);
      case K::And: return sat(f.children[0], t) && sat(f.children[1], t);
      case K::Or: return sat(f.children[0], t) || sat(f.children[1], t);
      case K::Implies: return !sat(f.children[0], t) || sat(f.children[1], t);
      case K::Eventually: {
        for (auto tp : oracle_window(f.interval, tr_.dt(), t, tr_.size())) {
          if (sat(f.children[0], tp)) return true;
        }
        return false;
      }
      case K::Always: {
        for (auto tp : oracle_window(f.interval, tr_.dt(), t, tr_.size())) {
          if (!sat(f.children[0], tp)) return false;
        }
        return true;
      }
      case K::Until: {
        for (auto tp : oracle_window(f.interval, tr_.dt(), t, tr_.size())) {
          if (!sat(f.children[1], tp)) continue;
          bool held = true;
          for (std::size_t tpp = t; tpp <= tp && held; ++tpp) held = sat(f.children[0], tpp);
          if (held) return true;
        }
        return false;
      }
    }
    return false;
  }

  const Trace& tr_;
  std::unordered_map<const Formula*, std::vector<std::optional<double>>> rho_memo_;
  std::unordered_map<const Formula*, std::vector<int>> sat_memo_;
};

inline double oracle_rho(const Formula& f, const Trace& tr, std::size_t t) { return Oracle(tr).rho(f, t); }
inline bool oracle_sat(const Formula& f, const Trace& tr, std::size_t t) { return Oracle(tr).sat(f, t); }

/// Random formulas over dims {x, y} whose atoms never hit a domain error.
class FormulaGenerator {
 public:
  explicit FormulaGenerator(unsigned seed) : rng_(seed) {}

  Expr expr(int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 2 : 7);
    switch (pick(rng_)) {
      case 0: return Expr::constant(real(-2.0, 2.0));
      case 1: return Expr::signal("x");
      case 2: return Expr::signal("y");
      case 3: return expr(depth - 1) + expr(depth - 1);
      case 4: return expr(depth - 1) - expr(depth - 1);
      case 5: return expr(depth - 1) * expr(depth - 1);
      case 6: return Expr::unary(Expr::Kind::Square, expr(depth - 1));
      default:
        return Expr::unary(Expr::Kind::Sqrt,
                           Expr::unary(Expr::Kind::Square, expr(depth - 1)) + Expr::constant(real(0.0, 1.0)));
    }
  }

  stl::Interval interval() {
    std::uniform_int_distribution<int> pick(0, 3);
    const int k = pick(rng_);
    if (k == 0) return {};
    const double lo = real(0.0, 3.0);
    if (k == 1) return {lo, std::numeric_limits<double>::infinity()};
    return {lo, lo + real(0.0, 4.0)};
  }

  Formula formula(int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 9);
    const int k = pick(rng_);
    if (k == 0) {
      std::bernoulli_distribution rare(0.1);
      if (rare(rng_)) return Formula::truth();
    }
    if (k <= 1) {
      std::bernoulli_distribution less(0.5);
      return Formula::predicate(expr(2), less(rng_) ? stl::Comparator::Less : stl::Comparator::Greater, expr(1));
    }
    switch (k) {
      case 2: return Formula::negation(formula(depth - 1));
      case 3: return Formula::conjunction(formula(depth - 1), formula(depth - 1));
      case 4: return Formula::disjunction(formula(depth - 1), formula(depth - 1));
      case 5: return Formula::implication(formula(depth - 1), formula(depth - 1));
      case 6: return Formula::eventually(formula(depth - 1), interval());
      case 7: return Formula::always(formula(depth - 1), interval());
      case 8: return Formula::until(formula(depth - 1), formula(depth - 1), interval());
      default: return formula(depth - 1);
    }
  }

  Trace trace(std::size_t max_len) {
    const double dts[] = {0.1, 0.25, 0.5, 1.0};
    std::uniform_int_distribution<int> dt_pick(0, 3);
    std::uniform_int_distribution<std::size_t> len(1, max_len);
    Trace tr({"x", "y"}, dts[dt_pick(rng_)], "rand");
    const std::size_t n = len(rng_);
    for (std::size_t t = 0; t < n; ++t) {
      const double s[2] = {real(-2.0, 2.0), real(-2.0, 2.0)};
      tr.push_back(s);
    }
    return tr;
  }

  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline bool same_value(double a, double b, double tol) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= tol;
}

}  // namespace stlrl::testing
