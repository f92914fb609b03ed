#include "stlrl/envs/environment.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "stlrl/stl/parser.hpp"
#include "stlrl/stl/robustness.hpp"

namespace stlrl::envs {

namespace {

using stl::Expr;
using stl::Formula;

// Index layout of EnvState::values per environment.
namespace circle_ix {
constexpr std::size_t x = 0, y = 1, u = 2, v = 3;
}
namespace goal_ix {
constexpr std::size_t xa = 0, ya = 1, xg = 2, yg = 3, ua = 4, va = 5;
}
namespace vel_ix {
constexpr std::size_t x = 0, u = 1;
}

constexpr double kSpawnHazardMargin = 0.1;

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

bool clear_of_hazards(const EnvSpec& spec, double x, double y) {
  for (const auto& h : spec.hidden.hazards) {
    if (std::hypot(x - h.x, y - h.y) <= spec.hidden.hazard_radius + kSpawnHazardMargin) return false;
  }
  return true;
}

Point sample_free_point(const EnvSpec& spec, std::mt19937_64& rng, const Point* away_from) {
  const double w = spec.spawn_half_width;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const Point p{uniform(rng, -w, w), uniform(rng, -w, w)};
    if (!clear_of_hazards(spec, p.x, p.y)) continue;
    if (away_from && std::hypot(p.x - away_from->x, p.y - away_from->y) < spec.goal_min_separation) continue;
    return p;
  }
  throw std::runtime_error("goal environment: no free placement found in spawn box");
}

// Planar double integrator with a speed cap and arena walls.
void integrate_planar(const EnvSpec& spec, double& x, double& y, double& u, double& v, std::span<const double> a) {
  u += a[0] * spec.dt;
  v += a[1] * spec.dt;
  const double speed = std::hypot(u, v);
  if (speed > spec.speed_cap) {
    u *= spec.speed_cap / speed;
    v *= spec.speed_cap / speed;
  }
  x += u * spec.dt;
  y += v * spec.dt;
  const double wall = spec.arena_half_width;
  if (std::abs(x) > wall) {
    x = std::clamp(x, -wall, wall);
    u = 0.0;
  }
  if (std::abs(y) > wall) {
    y = std::clamp(y, -wall, wall);
    v = 0.0;
  }
}

EnvSpec base_spec(std::string name, EnvKind kind) {
  EnvSpec s;
  s.name = std::move(name);
  s.kind = kind;
  return s;
}

}  // namespace

std::vector<Point> default_hazards() {
  return {{-0.75, 1.0}, {1.0, 0.2}, {-1.4, 0.7}, {-0.5, -0.3}, {0.25, 0.9}, {0.0, -1.5}, {-1.9, 1.0}, {1.0, -1.0}};
}

std::string hazard_template(std::size_t hazard_count, double radius) {
  std::string body;
  for (std::size_t i = 1; i <= hazard_count; ++i) {
    const auto n = std::to_string(i);
    const std::string atom =
        "sqrt(sq(xa - p_xh" + n + ") + sq(ya - p_yh" + n + ")) < " + stl::format_real(radius);
    body = i == 1 ? atom : "(" + body + ") or (" + atom + ")";
  }
  // Round-trip through the parser to get the canonical spelling.
  return stl::to_string(stl::parse_formula("G(not(" + body + "))", {"xa", "ya"}));
}

EnvSpec make_goal_spec(std::size_t hazard_count) {
  auto hazards = default_hazards();
  if (hazard_count < 1 || hazard_count > hazards.size()) {
    throw std::invalid_argument("goal environment supports 1..8 hazards");
  }
  hazards.resize(hazard_count);
  EnvSpec s = base_spec(hazard_count == 8 ? "goal" : "goal" + std::to_string(hazard_count), EnvKind::Goal);
  s.state_dims = {"xa", "ya", "xg", "yg", "ua", "va"};
  s.action_low = {-4.0, -4.0};
  s.action_high = {4.0, 4.0};
  s.obs_dim = 6;
  s.horizon = 500;
  s.dt = 0.02;
  s.speed_cap = 2.0;
  s.spawn_half_width = 2.0;
  s.hidden.hazards = std::move(hazards);
  s.template_text = hazard_template(hazard_count, s.hidden.hazard_radius);
  for (std::size_t i = 1; i <= hazard_count; ++i) {
    s.bounds.push_back({"p_xh" + std::to_string(i), -2.5, 2.5});
    s.bounds.push_back({"p_yh" + std::to_string(i), -2.5, 2.5});
  }
  return s;
}

EnvSpec make_spec(const std::string& name) {
  if (name == "circle") {
    EnvSpec s = base_spec(name, EnvKind::Circle);
    s.state_dims = {"x", "y", "u", "v"};
    s.action_low = {-4.0, -4.0};
    s.action_high = {4.0, 4.0};
    s.obs_dim = 4;
    s.horizon = 500;
    s.dt = 0.02;
    s.speed_cap = 2.0;
    s.spawn_half_width = 0.8;
    s.template_text = "G(not((x < p_lo) or (x > p_hi)))";
    s.bounds = {{"p_lo", -3.0, 0.0}, {"p_hi", 0.0, 3.0}};
    return s;
  }
  if (name == "velocity") {
    EnvSpec s = base_spec(name, EnvKind::Velocity);
    s.state_dims = {"x", "u"};
    s.action_low = {-5.0};
    s.action_high = {5.0};
    s.obs_dim = 1;
    s.horizon = 200;
    s.dt = 0.05;
    s.speed_cap = 5.0;
    s.template_text = "G(not(u > p_max))";
    s.bounds = {{"p_max", 0.0, 6.0}};
    return s;
  }
  if (name == "goal") return make_goal_spec(8);
  if (name.starts_with("goal")) {
    const auto n = std::stoul(name.substr(4));
    return make_goal_spec(n);
  }
  throw std::invalid_argument("unknown environment '" + name + "'");
}

EnvState reset(const EnvSpec& spec, std::uint64_t seed) {
  EnvState s;
  s.rng.seed(seed);
  switch (spec.kind) {
    case EnvKind::Circle: {
      const double w = spec.spawn_half_width;
      s.values = {uniform(s.rng, -w, w), uniform(s.rng, -w, w), 0.0, 0.0};
      break;
    }
    case EnvKind::Goal: {
      const Point agent = sample_free_point(spec, s.rng, nullptr);
      const Point goal = sample_free_point(spec, s.rng, &agent);
      s.values = {agent.x, agent.y, goal.x, goal.y, 0.0, 0.0};
      break;
    }
    case EnvKind::Velocity:
      s.values = {0.0, 0.0};
      break;
  }
  return s;
}

double circle_reward(const EnvSpec& spec, double x, double y, double u, double v) {
  const double r = std::hypot(x, y);
  return (1.0 / (1.0 + std::abs(r - spec.circle_radius))) * ((-u * y + v * x) / std::max(r, spec.radius_eps));
}

double goal_reward(const EnvSpec& spec, double prev_distance, double distance) {
  return (prev_distance - distance) * spec.goal_beta;
}

double velocity_reward(const EnvSpec& spec, double prev_x, double x, std::span<const double> action) {
  double effort = 0.0;
  for (double a : action) effort += a * a;
  return spec.forward_weight * (x - prev_x) / spec.dt - spec.control_weight * effort;
}

StepResult step(const EnvSpec& spec, const EnvState& s, std::span<const double> action) {
  if (action.size() != spec.action_dim()) {
    throw std::invalid_argument("action has " + std::to_string(action.size()) + " entries, expected " +
                                std::to_string(spec.action_dim()));
  }
  std::vector<double> a(action.begin(), action.end());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) throw std::invalid_argument("non-finite action");
    a[i] = std::clamp(a[i], spec.action_low[i], spec.action_high[i]);
  }

  StepResult out{s, 0.0, false};
  auto& sv = out.state.values;
  switch (spec.kind) {
    case EnvKind::Circle: {
      using namespace circle_ix;
      integrate_planar(spec, sv[x], sv[y], sv[u], sv[circle_ix::v], a);
      out.reward = circle_reward(spec, sv[x], sv[y], sv[u], sv[circle_ix::v]);
      break;
    }
    case EnvKind::Goal: {
      using namespace goal_ix;
      const double before = std::hypot(sv[xa] - sv[xg], sv[ya] - sv[yg]);
      integrate_planar(spec, sv[xa], sv[ya], sv[ua], sv[va], a);
      const double after = std::hypot(sv[xa] - sv[xg], sv[ya] - sv[yg]);
      out.reward = goal_reward(spec, before, after);
      if (after < spec.goal_radius) {
        const Point agent{sv[xa], sv[ya]};
        const Point goal = sample_free_point(spec, out.state.rng, &agent);
        sv[xg] = goal.x;
        sv[yg] = goal.y;
      }
      break;
    }
    case EnvKind::Velocity: {
      using namespace vel_ix;
      const double prev = sv[x];
      sv[u] = std::clamp(sv[u] + a[0] * spec.dt, -spec.speed_cap, spec.speed_cap);
      sv[x] += sv[u] * spec.dt;
      out.reward = velocity_reward(spec, prev, sv[x], a);
      break;
    }
  }
  out.state.step = s.step + 1;
  out.done = out.state.step >= spec.horizon;
  return out;
}

std::vector<double> observe(const EnvSpec& spec, const EnvState& s) {
  const auto& v = s.values;
  switch (spec.kind) {
    case EnvKind::Circle:
      return v;
    case EnvKind::Goal: {
      using namespace goal_ix;
      return {v[xa], v[ya], v[ua], v[va], v[xg] - v[xa], v[yg] - v[ya]};
    }
    case EnvKind::Velocity:
      return {v[vel_ix::u]};
  }
  return {};
}

Formula true_constraint(const EnvSpec& spec) {
  const auto& h = spec.hidden;
  switch (spec.kind) {
    case EnvKind::Circle: {
      const auto x = Expr::signal("x");
      const Formula unsafe =
          Formula::disjunction(Formula::predicate(x, stl::Comparator::Less, Expr::constant(h.x_lo)),
                               Formula::predicate(x, stl::Comparator::Greater, Expr::constant(h.x_hi)));
      return Formula::always(Formula::negation(unsafe));
    }
    case EnvKind::Goal: {
      Formula unsafe;
      for (std::size_t i = 0; i < h.hazards.size(); ++i) {
        const auto dist = Expr::unary(
            Expr::Kind::Sqrt,
            Expr::unary(Expr::Kind::Square, Expr::signal("xa") - Expr::constant(h.hazards[i].x)) +
                Expr::unary(Expr::Kind::Square, Expr::signal("ya") - Expr::constant(h.hazards[i].y)));
        const auto inside = Formula::predicate(dist, stl::Comparator::Less, Expr::constant(h.hazard_radius));
        unsafe = i == 0 ? inside : Formula::disjunction(unsafe, inside);
      }
      return Formula::always(Formula::negation(unsafe));
    }
    case EnvKind::Velocity:
      return Formula::always(Formula::negation(
          Formula::predicate(Expr::signal("u"), stl::Comparator::Greater, Expr::constant(h.u_max))));
  }
  return {};
}

EpisodeStats run_episode(const EnvSpec& spec, const ActionSource& policy, std::uint64_t seed, bool deterministic,
                         const stl::Formula* cost, std::string id) {
  if (id.empty()) id = spec.name + "-" + std::to_string(seed);
  EpisodeStats stats{0.0, 0.0, stl::Trace(spec.state_dims, spec.dt, std::move(id))};
  std::optional<stl::StateCost> cost_fn;
  if (cost) cost_fn.emplace(*cost, spec.state_dims);
  // Exploration noise draws from its own stream so env randomness is
  // unaffected by whether the policy explores.
  std::mt19937_64 noise_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  EnvState s = reset(spec, seed);
  for (std::size_t t = 0; t < spec.horizon; ++t) {
    const auto obs = observe(spec, s);
    const auto action = policy.act(obs, !deterministic, noise_rng);
    auto r = step(spec, s, action);
    stats.total_reward += r.reward;
    if (cost_fn) stats.total_cost += (*cost_fn)(r.state.values);
    stats.trace.push_back(r.state.values);
    s = std::move(r.state);
    if (r.done) break;
  }
  return stats;
}

stl::Trace record_rollout(const EnvSpec& spec, const ActionSource& policy, std::uint64_t seed, bool deterministic,
                          std::string id) {
  return run_episode(spec, policy, seed, deterministic, nullptr, std::move(id)).trace;
}

}  // namespace stlrl::envs
