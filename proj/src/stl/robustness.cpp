#include "stlrl/stl/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace stlrl::stl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kUnbounded = static_cast<std::size_t>(-1);
// Absorbs representation error in a/dt, e.g. 0.3 / 0.1 = 2.9999999999999996.
constexpr double kGridSlack = 1e-9;

std::vector<double> unary_map(std::vector<double> v, double (*fn)(double)) {
  for (auto& x : v) x = fn(x);
  return v;
}

}  // namespace

IndexWindow to_index_window(const Interval& interval, double dt) {
  IndexWindow w{};
  w.first = static_cast<std::size_t>(std::floor(interval.lo / dt + kGridSlack));
  if (std::isinf(interval.hi)) {
    w.last = kUnbounded;
  } else {
    w.last = static_cast<std::size_t>(std::max(0.0, std::ceil(interval.hi / dt - kGridSlack)));
    w.last = std::max(w.last, w.first);
  }
  return w;
}

std::vector<double> evaluate(const Expr& e, const Trace& tr) {
  const std::size_t n = tr.size();
  using K = Expr::Kind;
  switch (e.kind) {
    case K::Constant:
      return std::vector<double>(n, e.value);
    case K::Signal: {
      const std::size_t col = tr.dim_index(e.name);
      if (col == Trace::npos) throw std::invalid_argument("trace '" + tr.id() + "' has no dimension '" + e.name + "'");
      std::vector<double> out(n);
      for (std::size_t t = 0; t < n; ++t) out[t] = tr.at(t, col);
      return out;
    }
    case K::Param:
      throw std::invalid_argument("cannot evaluate unbound parameter '" + e.name + "'");
    case K::Neg:
      return unary_map(evaluate(e.args[0], tr), [](double x) { return -x; });
    case K::Square:
      return unary_map(evaluate(e.args[0], tr), [](double x) { return x * x; });
    case K::Sqrt: {
      auto v = evaluate(e.args[0], tr);
      for (auto& x : v) {
        if (x < 0.0) throw DomainError("sqrt of negative value in '" + to_string(e) + "'");
        x = std::sqrt(x);
      }
      return v;
    }
    case K::Add:
    case K::Sub:
    case K::Mul:
    case K::Div: {
      auto a = evaluate(e.args[0], tr);
      const auto b = evaluate(e.args[1], tr);
      for (std::size_t t = 0; t < n; ++t) {
        switch (e.kind) {
          case K::Add: a[t] += b[t]; break;
          case K::Sub: a[t] -= b[t]; break;
          case K::Mul: a[t] *= b[t]; break;
          default:
            if (b[t] == 0.0) throw DomainError("division by zero in '" + to_string(e) + "'");
            a[t] /= b[t];
        }
      }
      return a;
    }
  }
  return {};
}

namespace {

// Window [t + first, t + last] clipped to the trace; returns false if empty.
bool clip_window(std::size_t t, const IndexWindow& w, std::size_t n, std::size_t& lo, std::size_t& hi) {
  if (w.first > n - 1 || t > n - 1 - w.first) return false;
  lo = t + w.first;
  hi = (w.last == kUnbounded || w.last > n - 1 - t) ? n - 1 : t + w.last;
  return true;
}

std::vector<double> window_extremum(const std::vector<double>& body, const IndexWindow& w, bool take_max) {
  const std::size_t n = body.size();
  const double empty = take_max ? -kInf : kInf;
  std::vector<double> out(n, empty);
  if (w.last == kUnbounded) {
    // Running extremum from the end, then shift by the window start.
    std::vector<double> suffix(n);
    double acc = empty;
    for (std::size_t i = n; i-- > 0;) {
      acc = take_max ? std::max(acc, body[i]) : std::min(acc, body[i]);
      suffix[i] = acc;
    }
    for (std::size_t t = 0; t < n; ++t) {
      if (w.first <= n - 1 && t <= n - 1 - w.first) out[t] = suffix[t + w.first];
    }
    return out;
  }
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t lo = 0;
    std::size_t hi = 0;
    if (!clip_window(t, w, n, lo, hi)) continue;
    double acc = empty;
    for (std::size_t i = lo; i <= hi; ++i) acc = take_max ? std::max(acc, body[i]) : std::min(acc, body[i]);
    out[t] = acc;
  }
  return out;
}

std::vector<double> until_signal(const std::vector<double>& lhs, const std::vector<double>& rhs, const IndexWindow& w) {
  const std::size_t n = lhs.size();
  std::vector<double> out(n, -kInf);
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t lo = 0;
    std::size_t hi = 0;
    if (!clip_window(t, w, n, lo, hi)) continue;
    double prefix_min = kInf;
    double best = -kInf;
    for (std::size_t tp = t; tp <= hi; ++tp) {
      prefix_min = std::min(prefix_min, lhs[tp]);
      if (tp >= lo) best = std::max(best, std::min(rhs[tp], prefix_min));
    }
    out[t] = best;
  }
  return out;
}

}  // namespace

std::vector<double> robustness_signal(const Formula& f, const Trace& tr) {
  using K = Formula::Kind;
  const std::size_t n = tr.size();
  switch (f.kind) {
    case K::True:
      return std::vector<double>(n, kInf);
    case K::Predicate: {
      auto a = evaluate(f.lhs, tr);
      const auto b = evaluate(f.rhs, tr);
      for (std::size_t t = 0; t < n; ++t) a[t] = f.cmp == Comparator::Greater ? a[t] - b[t] : b[t] - a[t];
      return a;
    }
    case K::Not:
      return unary_map(robustness_signal(f.children[0], tr), [](double x) { return -x; });
    case K::And:
    case K::Or:
    case K::Implies: {
      auto a = robustness_signal(f.children[0], tr);
      const auto b = robustness_signal(f.children[1], tr);
      for (std::size_t t = 0; t < n; ++t) {
        if (f.kind == K::And) {
          a[t] = std::min(a[t], b[t]);
        } else if (f.kind == K::Or) {
          a[t] = std::max(a[t], b[t]);
        } else {
          a[t] = std::max(-a[t], b[t]);
        }
      }
      return a;
    }
    case K::Eventually:
    case K::Always:
      return window_extremum(robustness_signal(f.children[0], tr), to_index_window(f.interval, tr.dt()),
                             f.kind == K::Eventually);
    case K::Until:
      return until_signal(robustness_signal(f.children[0], tr), robustness_signal(f.children[1], tr),
                          to_index_window(f.interval, tr.dt()));
  }
  return {};
}

double robustness(const Formula& f, const Trace& tr, std::size_t t) {
  if (t >= tr.size()) {
    throw std::out_of_range("sample index " + std::to_string(t) + " outside trace of length " +
                            std::to_string(tr.size()));
  }
  return robustness_signal(f, tr)[t];
}

bool satisfies(const Formula& f, const Trace& tr) { return robustness(f, tr, 0) > 0.0; }

int step_cost(const Formula& f, const Trace& state) {
  if (f.kind != Formula::Kind::Always) {
    throw ShapeError("step cost needs an always-rooted formula, got '" + to_string(f) + "'");
  }
  return robustness(f.children[0], state, 0) < 0.0 ? 1 : 0;
}

StateCost::StateCost(Formula formula, std::vector<std::string> dims)
    : formula_(std::move(formula)), dims_(std::move(dims)) {
  if (formula_.kind != Formula::Kind::Always) {
    throw ShapeError("step cost needs an always-rooted formula, got '" + to_string(formula_) + "'");
  }
  if (!is_ground(formula_)) throw std::invalid_argument("step cost formula has free parameters");
  for (const auto& name : signal_names(formula_)) {
    if (std::find(dims_.begin(), dims_.end(), name) == dims_.end()) {
      throw std::invalid_argument("cost formula references unknown dimension '" + name + "'");
    }
  }
}

double StateCost::body_robustness(std::span<const double> state) const {
  return robustness(formula_.children[0], Trace::single(dims_, state), 0);
}

int StateCost::operator()(std::span<const double> state) const { return body_robustness(state) < 0.0 ? 1 : 0; }

}  // namespace stlrl::stl
