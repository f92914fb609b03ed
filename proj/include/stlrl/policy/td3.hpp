#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stlrl/envs/environment.hpp"
#include "stlrl/policy/mlp.hpp"
#include "stlrl/policy/replay.hpp"
#include "stlrl/stl/formula.hpp"

namespace stlrl::policy {

/// Defaults are the full-scale settings; network widths, replay
/// settings and tau follow common TD3 practice.
struct Hyperparams {
  double actor_lr = 5e-6;
  double critic_lr = 1e-3;
  double gamma = 0.9;
  double cost_gamma = 0.99;
  std::size_t batch_size = 256;
  std::size_t policy_delay = 2;
  double exploration_noise = 0.1;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  double tau = 0.005;
  double cost_limit = 0.0;
  double lambda_lr = 5e-7;
  double lambda_init = 0.0;
  std::vector<std::size_t> hidden = {256, 256};

  std::size_t total_steps = 1000000;
  std::size_t steps_per_epoch = 500;
  std::size_t warmup_steps = 10000;
  std::size_t buffer_capacity = 1000000;
  std::size_t eval_episodes = 5;

  /// false: unconstrained baseline. Lambda stays at 0 and the cost critic
  /// is neither trained nor consulted; costs are still measured.
  bool constrained = true;

  /// Published settings per environment (total steps, steps per epoch).
  static Hyperparams published(const std::string& env);
  /// Smaller networks and budgets that finish on a single core.
  static Hyperparams desk(const std::string& env);
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolicySet {
  Hyperparams hp;
  Mlp actor, critic1, critic2, cost_critic;
  Mlp actor_target, critic1_target, critic2_target, cost_critic_target;
  Adam actor_opt, critic1_opt, critic2_opt, cost_opt;
  double lambda = 0.0;
  std::uint64_t env_steps = 0;
  std::uint64_t critic_updates = 0;

  bool operator==(const PolicySet& o) const;
};

/// Fresh networks for spec; targets start as copies of the online nets.
PolicySet make_policy_set(const envs::EnvSpec& spec, const Hyperparams& hp, std::uint64_t seed);

/// Actor output, plus Gaussian noise of exploration_noise times the action
/// half-range when explore is set, clipped to the bounds.
std::vector<double> select_action(const PolicySet& ps, std::span<const double> obs, bool explore,
                                  std::mt19937_64& rng);

/// Deterministic (or exploring) actor as an environment action source.
class PolicyActions : public envs::ActionSource {
 public:
  explicit PolicyActions(const PolicySet& ps) : ps_(ps) {}
  std::vector<double> act(std::span<const double> obs, bool explore, std::mt19937_64& rng) const override {
    return select_action(ps_, obs, explore, rng);
  }

 private:
  const PolicySet& ps_;
};

struct TdTargets {
  Vector reward;
  Vector cost;
};

/// Bootstrap targets given the already clipped and scaled smoothing noise
/// (act_dim x B). Reward bootstraps from min of the two target critics.
TdTargets td_targets(const PolicySet& ps, const Batch& batch, const Matrix& smoothing_noise);

/// Smoothing noise: N(0, policy_noise) clipped to +-noise_clip, both scaled
/// by the action half-range.
Matrix smoothing_noise(const PolicySet& ps, std::size_t batch_size, std::mt19937_64& rng);

/// Mean squared error of q(obs, action) against y. Accumulates dL/dparams
/// into grad when given.
double critic_loss(const Mlp& q, const Matrix& obs, const Matrix& action, const Vector& y, Params* grad);

/// mean(-min(Q1, Q2) + lambda * QC) at a = actor(obs). Accumulates
/// dL/d(actor params) into grad when given.
double actor_loss(const Mlp& actor, const Mlp& q1, const Mlp& q2, const Mlp& qc, double lambda, const Matrix& obs,
                  Params* grad);

struct CriticLosses {
  double q1 = 0.0, q2 = 0.0, cost = 0.0;
};

CriticLosses critic_update(PolicySet& ps, const Batch& batch, std::mt19937_64& rng);
/// Actor step followed by soft updates of all four target networks.
double actor_update(PolicySet& ps, const Batch& batch);
/// lambda <- max(0, lambda + lambda_lr * (jc - cost_limit)).
double lambda_update(PolicySet& ps, double jc_estimate);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::uint64_t steps = 0;
  double mean_return = 0.0;
  double mean_cost = 0.0;
  double lambda = 0.0;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  std::uint64_t steps = 0;
};

struct TrainOptions {
  /// Continue from these weights instead of fresh networks.
  const PolicySet* warm_start = nullptr;
  /// Called after each epoch.
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// TD3-Lagrangian training. Each step is charged step_cost on the post-step
/// state under cost_formula; lambda moves once per epoch from the mean cost
/// of eval_episodes deterministic episodes.
std::pair<PolicySet, TrainReport> train(const envs::EnvSpec& spec, const stl::Formula& cost_formula,
                                        const Hyperparams& hp, std::uint64_t seed, const TrainOptions& opts = {});

/// n deterministic rollouts with distinct seeds drawn from seed; ids are
/// prefix-0 .. prefix-(n-1).
std::vector<stl::Trace> rollout_set(const envs::EnvSpec& spec, const PolicySet& ps, std::size_t n, std::uint64_t seed,
                                    const std::string& prefix = "rollout");

/// Episode statistics under the deterministic actor.
struct Evaluation {
  double mean_return = 0.0;
  double mean_cost = 0.0;
};
Evaluation evaluate_policy(const envs::EnvSpec& spec, const PolicySet& ps, const stl::Formula& cost_formula,
                           std::size_t episodes, std::uint64_t seed);

/// Metrics CSV: epoch,steps,mean_return,mean_cost,lambda.
void write_metrics_csv(const TrainReport& report, const std::filesystem::path& path);

}  // namespace stlrl::policy
