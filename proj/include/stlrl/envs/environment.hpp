#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stlrl/stl/formula.hpp"
#include "stlrl/stl/trace.hpp"

namespace stlrl::envs {

enum class EnvKind { Circle, Goal, Velocity };

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct ParamBound {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
};

/// Ground-truth safety geometry. Only the oracle labeler and evaluation
/// harnesses turn this into a formula; learners see the template alone.
struct HiddenConstraint {
  double x_lo = -1.20;
  double x_hi = 1.0;
  std::vector<Point> hazards;
  double hazard_radius = 0.4;
  double u_max = 3.2096;
};

struct EnvSpec {
  std::string name;
  EnvKind kind = EnvKind::Circle;
  std::vector<std::string> state_dims;
  std::vector<double> action_low;
  std::vector<double> action_high;
  std::size_t obs_dim = 0;
  std::size_t horizon = 500;
  double dt = 0.02;

  double circle_radius = 1.5;   // r_c
  double goal_beta = 1.0;       // beta
  double forward_weight = 1.0;  // w_f
  double control_weight = 0.1;  // w_c
  double goal_radius = 0.3;
  double goal_min_separation = 0.7;
  double speed_cap = 2.0;
  double radius_eps = 1e-6;
  double spawn_half_width = 0.8;  // circle spawn box, goal placement box
  double arena_half_width = 3.0;  // positions are clamped to this box

  HiddenConstraint hidden;

  std::string template_text;
  std::vector<ParamBound> bounds;

  std::size_t action_dim() const { return action_low.size(); }
};

/// Default specs: "circle", "goal" (8 hazards) and "velocity". The goal
/// environment can be reduced to its first n hazards.
EnvSpec make_spec(const std::string& name);
EnvSpec make_goal_spec(std::size_t hazard_count);
std::vector<Point> default_hazards();

/// Parameterized constraint template for a goal env with n hazards of known
/// radius; each hazard contributes p_xh<i> and p_yh<i>.
std::string hazard_template(std::size_t hazard_count, double radius);

struct EnvState {
  std::vector<double> values;  // ordered as EnvSpec::state_dims
  std::size_t step = 0;
  std::mt19937_64 rng;

  bool operator==(const EnvState& o) const { return values == o.values && step == o.step && rng == o.rng; }
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

EnvState reset(const EnvSpec& spec, std::uint64_t seed);

/// Double-integrator step: velocity += a*dt (clipped to the speed cap),
/// position += velocity*dt. Actions are clipped to bounds; non-finite
/// actions throw std::invalid_argument.
StepResult step(const EnvSpec& spec, const EnvState& s, std::span<const double> action);

/// Policy input derived from the state.
std::vector<double> observe(const EnvSpec& spec, const EnvState& s);

double circle_reward(const EnvSpec& spec, double x, double y, double u, double v);
double goal_reward(const EnvSpec& spec, double prev_distance, double distance);
double velocity_reward(const EnvSpec& spec, double prev_x, double x, std::span<const double> action);

/// Ground formula for the hidden constraint, always-rooted over a state
/// predicate.
stl::Formula true_constraint(const EnvSpec& spec);

/// Anything that can pick actions from observations.
class ActionSource {
 public:
  virtual ~ActionSource() = default;
  virtual std::vector<double> act(std::span<const double> obs, bool explore, std::mt19937_64& rng) const = 0;
};

/// Runs one episode from reset(spec, seed) and records the post-step state
/// after every action, so the trace holds exactly the states that step costs
/// are charged on.
stl::Trace record_rollout(const EnvSpec& spec, const ActionSource& policy, std::uint64_t seed, bool deterministic,
                          std::string id = {});

struct EpisodeStats {
  double total_reward = 0.0;
  double total_cost = 0.0;
  stl::Trace trace;
};

/// Like record_rollout but also sums rewards and, when cost is given, step
/// costs against that always-rooted formula.
EpisodeStats run_episode(const EnvSpec& spec, const ActionSource& policy, std::uint64_t seed, bool deterministic,
                         const stl::Formula* cost = nullptr, std::string id = {});

}  // namespace stlrl::envs
