#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stlrl/stl/formula.hpp"
#include "stlrl/stl/trace.hpp"

namespace stlrl::stl {

/// Sample-index window [first, last] of a time interval; last is clipped to
/// the trace end by the caller. Lower bounds are floored and upper bounds
/// ceiled onto the sampling grid.
struct IndexWindow {
  std::size_t first;
  std::size_t last;  // SIZE_MAX when unbounded
};
IndexWindow to_index_window(const Interval& interval, double dt);

/// Value of an expression at every sample. Throws DomainError on division by
/// zero or sqrt of a negative number, std::invalid_argument when a parameter
/// reference is still present or a signal is missing from the trace.
std::vector<double> evaluate(const Expr& e, const Trace& tr);

/// Quantitative semantics at every sample index. True evaluates to +inf; a
/// temporal window that starts past the trace end yields -inf for F/U and
/// +inf for G.
std::vector<double> robustness_signal(const Formula& f, const Trace& tr);

/// Robustness at sample index t. Throws std::out_of_range when t >= T.
double robustness(const Formula& f, const Trace& tr, std::size_t t = 0);

/// Strict satisfaction: robustness at index 0 is > 0.
bool satisfies(const Formula& f, const Trace& tr);

/// Per-step cost for an always-rooted constraint: 1 when the body's
/// robustness on the single state is negative, else 0. Throws ShapeError if
/// the formula is not G-rooted.
int step_cost(const Formula& f, const Trace& state);

/// Step cost evaluator bound to a fixed dimension layout, for use inside the
/// training loop where every environment step is scored.
class StateCost {
 public:
  StateCost(Formula formula, std::vector<std::string> dims);

  int operator()(std::span<const double> state) const;
  double body_robustness(std::span<const double> state) const;
  const Formula& formula() const { return formula_; }

 private:
  Formula formula_;
  std::vector<std::string> dims_;
};

}  // namespace stlrl::stl
