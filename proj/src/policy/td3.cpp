#include "stlrl/policy/td3.hpp"

#include <cmath>
#include <fstream>
#include <optional>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "stlrl/stl/robustness.hpp"

namespace stlrl::policy {

namespace {

Matrix concat_rows(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

Matrix clip_to(const Matrix& a, const Mlp& actor) {
  const Vector lo = actor.out_mid() - actor.out_half();
  const Vector hi = actor.out_mid() + actor.out_half();
  return a.cwiseMax(lo.replicate(1, a.cols())).cwiseMin(hi.replicate(1, a.cols()));
}

void require_finite(double loss, const char* what, const PolicySet& ps) {
  if (!std::isfinite(loss)) {
    throw TrainingDiverged(std::string(what) + " loss is not finite after " + std::to_string(ps.critic_updates) +
                           " critic updates (lambda " + std::to_string(ps.lambda) + ")");
  }
}

Matrix column(std::span<const double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

// Minibatch temporaries sit just above glibc's default mmap threshold, so
// every update would otherwise map and unmap fresh pages.
void keep_allocations_on_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

Hyperparams Hyperparams::published(const std::string& env) {
  Hyperparams hp;
  if (env == "circle") {
    hp.total_steps = 1000000;
    hp.steps_per_epoch = 500;
  } else if (env.starts_with("goal")) {
    hp.total_steps = 1500000;
    hp.steps_per_epoch = 1000;
  } else {
    hp.total_steps = 1000000;
    hp.steps_per_epoch = 1000;
  }
  return hp;
}

Hyperparams Hyperparams::desk(const std::string& env) {
  Hyperparams hp = published(env);
  hp.hidden = {64, 64};
  hp.actor_lr = 3e-4;
  // With a zero cost limit lambda never decreases; the planar tasks need a
  // slower multiplier or the policy freezes in place.
  hp.lambda_lr = env == "velocity" ? 1e-3 : 1e-4;
  hp.warmup_steps = 2000;
  hp.buffer_capacity = 200000;
  hp.total_steps = 200000;
  return hp;
}

bool PolicySet::operator==(const PolicySet& o) const {
  auto same_opt = [](const Adam& a, const Adam& b) { return a.t == b.t && a.m == b.m && a.v == b.v; };
  return actor == o.actor && critic1 == o.critic1 && critic2 == o.critic2 && cost_critic == o.cost_critic &&
         actor_target == o.actor_target && critic1_target == o.critic1_target &&
         critic2_target == o.critic2_target && cost_critic_target == o.cost_critic_target &&
         same_opt(actor_opt, o.actor_opt) && same_opt(critic1_opt, o.critic1_opt) &&
         same_opt(critic2_opt, o.critic2_opt) && same_opt(cost_opt, o.cost_opt) && lambda == o.lambda &&
         env_steps == o.env_steps && critic_updates == o.critic_updates;
}

PolicySet make_policy_set(const envs::EnvSpec& spec, const Hyperparams& hp, std::uint64_t seed) {
  PolicySet ps;
  ps.hp = hp;
  std::vector<std::size_t> actor_sizes{spec.obs_dim};
  std::vector<std::size_t> critic_sizes{spec.obs_dim + spec.action_dim()};
  for (auto h : hp.hidden) {
    actor_sizes.push_back(h);
    critic_sizes.push_back(h);
  }
  actor_sizes.push_back(spec.action_dim());
  critic_sizes.push_back(1);

  std::mt19937_64 rng(seed);
  ps.actor = Mlp(actor_sizes, OutputKind::TanhScaled, spec.action_low, spec.action_high);
  ps.critic1 = Mlp(critic_sizes, OutputKind::Identity);
  ps.critic2 = Mlp(critic_sizes, OutputKind::Identity);
  ps.cost_critic = Mlp(critic_sizes, OutputKind::Identity);
  for (Mlp* m : {&ps.actor, &ps.critic1, &ps.critic2, &ps.cost_critic}) m->init(rng);
  ps.actor_target = ps.actor;
  ps.critic1_target = ps.critic1;
  ps.critic2_target = ps.critic2;
  ps.cost_critic_target = ps.cost_critic;
  ps.actor_opt = Adam(ps.actor.params(), {hp.actor_lr});
  ps.critic1_opt = Adam(ps.critic1.params(), {hp.critic_lr});
  ps.critic2_opt = Adam(ps.critic2.params(), {hp.critic_lr});
  ps.cost_opt = Adam(ps.cost_critic.params(), {hp.critic_lr});
  ps.lambda = hp.constrained ? std::max(0.0, hp.lambda_init) : 0.0;
  return ps;
}

std::vector<double> select_action(const PolicySet& ps, std::span<const double> obs, bool explore,
                                  std::mt19937_64& rng) {
  Matrix a = ps.actor.forward(column(obs));
  if (explore) {
    std::normal_distribution<double> n(0.0, ps.hp.exploration_noise);
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, 0) += n(rng) * ps.actor.out_half()[i];
    a = clip_to(a, ps.actor);
  }
  return {a.data(), a.data() + a.size()};
}

Matrix smoothing_noise(const PolicySet& ps, std::size_t batch_size, std::mt19937_64& rng) {
  const auto& half = ps.actor.out_half();
  Matrix noise(half.size(), static_cast<Eigen::Index>(batch_size));
  std::normal_distribution<double> n(0.0, ps.hp.policy_noise);
  for (Eigen::Index j = 0; j < noise.cols(); ++j) {
    for (Eigen::Index i = 0; i < noise.rows(); ++i) {
      noise(i, j) = std::clamp(n(rng), -ps.hp.noise_clip, ps.hp.noise_clip) * half[i];
    }
  }
  return noise;
}

TdTargets td_targets(const PolicySet& ps, const Batch& batch, const Matrix& noise) {
  const Matrix next_action = clip_to(ps.actor_target.forward(batch.next_obs) + noise, ps.actor_target);
  const Matrix sa = concat_rows(batch.next_obs, next_action);
  const Vector q1 = ps.critic1_target.forward(sa).row(0).transpose();
  const Vector q2 = ps.critic2_target.forward(sa).row(0).transpose();
  const Vector not_done = Vector::Ones(batch.done.size()) - batch.done;
  TdTargets t;
  t.reward = batch.reward + ps.hp.gamma * not_done.cwiseProduct(q1.cwiseMin(q2));
  if (ps.hp.constrained) {
    const Vector qc = ps.cost_critic_target.forward(sa).row(0).transpose();
    t.cost = batch.cost + ps.hp.cost_gamma * not_done.cwiseProduct(qc);
  }
  return t;
}

double critic_loss(const Mlp& q, const Matrix& obs, const Matrix& action, const Vector& y, Params* grad) {
  Mlp::Cache cache;
  const Matrix out = q.forward(concat_rows(obs, action), cache);
  const Eigen::RowVectorXd err = out.row(0) - y.transpose();
  const double n = static_cast<double>(y.size());
  if (grad) q.backward(cache, (2.0 / n) * err, grad);
  return err.squaredNorm() / n;
}

double actor_loss(const Mlp& actor, const Mlp& q1, const Mlp& q2, const Mlp& qc, double lambda, const Matrix& obs,
                  Params* grad) {
  Mlp::Cache ac, c1, c2, cc;
  const Matrix a = actor.forward(obs, ac);
  const Matrix sa = concat_rows(obs, a);
  const Matrix v1 = q1.forward(sa, c1);
  const Matrix v2 = q2.forward(sa, c2);
  const double n = static_cast<double>(obs.cols());
  const Eigen::Index act_rows = a.rows();

  Matrix vc;
  const bool use_cost = lambda != 0.0;
  if (use_cost) vc = qc.forward(sa, cc);

  double loss = 0.0;
  Matrix d1 = Matrix::Zero(1, obs.cols());
  Matrix d2 = Matrix::Zero(1, obs.cols());
  for (Eigen::Index j = 0; j < obs.cols(); ++j) {
    // Ties go to the first critic.
    if (v1(0, j) <= v2(0, j)) {
      loss -= v1(0, j);
      d1(0, j) = -1.0 / n;
    } else {
      loss -= v2(0, j);
      d2(0, j) = -1.0 / n;
    }
    if (use_cost) loss += lambda * vc(0, j);
  }
  loss /= n;
  if (!grad) return loss;

  Matrix da = q1.backward(c1, d1, nullptr).bottomRows(act_rows);
  da += q2.backward(c2, d2, nullptr).bottomRows(act_rows);
  if (use_cost) {
    const Matrix dc = Matrix::Constant(1, obs.cols(), lambda / n);
    da += qc.backward(cc, dc, nullptr).bottomRows(act_rows);
  }
  actor.backward(ac, da, grad);
  return loss;
}

CriticLosses critic_update(PolicySet& ps, const Batch& batch, std::mt19937_64& rng) {
  const Matrix noise = smoothing_noise(ps, static_cast<std::size_t>(batch.obs.cols()), rng);
  const TdTargets y = td_targets(ps, batch, noise);
  CriticLosses out;
  Params g = ps.critic1.zeros_like();
  out.q1 = critic_loss(ps.critic1, batch.obs, batch.action, y.reward, &g);
  require_finite(out.q1, "critic", ps);
  ps.critic1_opt.step(ps.critic1.params(), g);
  g.set_zero();
  out.q2 = critic_loss(ps.critic2, batch.obs, batch.action, y.reward, &g);
  require_finite(out.q2, "critic", ps);
  ps.critic2_opt.step(ps.critic2.params(), g);
  if (ps.hp.constrained) {
    g.set_zero();
    out.cost = critic_loss(ps.cost_critic, batch.obs, batch.action, y.cost, &g);
    require_finite(out.cost, "cost critic", ps);
    ps.cost_opt.step(ps.cost_critic.params(), g);
  }
  ++ps.critic_updates;
  return out;
}

double actor_update(PolicySet& ps, const Batch& batch) {
  Params g = ps.actor.zeros_like();
  const double loss = actor_loss(ps.actor, ps.critic1, ps.critic2, ps.cost_critic, ps.lambda, batch.obs, &g);
  require_finite(loss, "actor", ps);
  ps.actor_opt.step(ps.actor.params(), g);
  soft_update(ps.actor_target.params(), ps.actor.params(), ps.hp.tau);
  soft_update(ps.critic1_target.params(), ps.critic1.params(), ps.hp.tau);
  soft_update(ps.critic2_target.params(), ps.critic2.params(), ps.hp.tau);
  soft_update(ps.cost_critic_target.params(), ps.cost_critic.params(), ps.hp.tau);
  return loss;
}

double lambda_update(PolicySet& ps, double jc_estimate) {
  ps.lambda = std::max(0.0, ps.lambda + ps.hp.lambda_lr * (jc_estimate - ps.hp.cost_limit));
  return ps.lambda;
}

Evaluation evaluate_policy(const envs::EnvSpec& spec, const PolicySet& ps, const stl::Formula& cost_formula,
                           std::size_t episodes, std::uint64_t seed) {
  const PolicyActions actions(ps);
  Evaluation e;
  for (std::size_t k = 0; k < episodes; ++k) {
    const auto stats = envs::run_episode(spec, actions, seed + k, true, &cost_formula);
    e.mean_return += stats.total_reward;
    e.mean_cost += stats.total_cost;
  }
  if (episodes > 0) {
    e.mean_return /= static_cast<double>(episodes);
    e.mean_cost /= static_cast<double>(episodes);
  }
  return e;
}

std::pair<PolicySet, TrainReport> train(const envs::EnvSpec& spec, const stl::Formula& cost_formula,
                                        const Hyperparams& hp, std::uint64_t seed, const TrainOptions& opts) {
  if (hp.steps_per_epoch == 0 || hp.batch_size == 0 || hp.policy_delay == 0) {
    throw std::invalid_argument("steps_per_epoch, batch_size and policy_delay must be positive");
  }
  keep_allocations_on_heap();
  const stl::StateCost cost_fn(cost_formula, spec.state_dims);
  PolicySet ps = opts.warm_start ? *opts.warm_start : make_policy_set(spec, hp, seed);
  if (opts.warm_start) {
    ps.hp = hp;
    if (!hp.constrained) ps.lambda = 0.0;
  }
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  const std::uint64_t eval_seed = seed * 1000003ULL + 17;
  ReplayBuffer buffer(spec.obs_dim, spec.action_dim(), std::max<std::size_t>(1, std::min(hp.buffer_capacity, hp.total_steps)));
  TrainReport report;

  auto run_epoch_eval = [&](std::size_t epoch) {
    const Evaluation e = evaluate_policy(spec, ps, cost_formula, hp.eval_episodes, eval_seed);
    if (hp.constrained) lambda_update(ps, e.mean_cost);
    EpochMetrics m{epoch, ps.env_steps, e.mean_return, e.mean_cost, ps.lambda};
    report.epochs.push_back(m);
    if (opts.on_epoch) opts.on_epoch(m);
  };

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  envs::EnvState state = envs::reset(spec, rng());
  std::vector<double> action(spec.action_dim());
  for (std::size_t t = 1; t <= hp.total_steps; ++t) {
    const auto obs = envs::observe(spec, state);
    if (t <= hp.warmup_steps) {
      for (std::size_t i = 0; i < action.size(); ++i) {
        action[i] = spec.action_low[i] + (spec.action_high[i] - spec.action_low[i]) * unit(rng);
      }
    } else {
      action = select_action(ps, obs, true, rng);
    }
    auto r = envs::step(spec, state, action);
    const double c = cost_fn(r.state.values);
    const auto next_obs = envs::observe(spec, r.state);
    // Episodes end only at the time limit, which is not a terminal state.
    buffer.add(obs, action, r.reward, c, next_obs, false);
    state = r.done ? envs::reset(spec, rng()) : std::move(r.state);
    ++ps.env_steps;

    if (t > hp.warmup_steps && buffer.size() >= hp.batch_size) {
      const Batch batch = buffer.sample(hp.batch_size, rng);
      critic_update(ps, batch, rng);
      if (ps.critic_updates % hp.policy_delay == 0) actor_update(ps, batch);
    }
    if (t % hp.steps_per_epoch == 0) run_epoch_eval(t / hp.steps_per_epoch);
  }
  if (hp.total_steps % hp.steps_per_epoch != 0) run_epoch_eval(hp.total_steps / hp.steps_per_epoch + 1);
  report.steps = ps.env_steps;
  return {std::move(ps), std::move(report)};
}

std::vector<stl::Trace> rollout_set(const envs::EnvSpec& spec, const PolicySet& ps, std::size_t n, std::uint64_t seed,
                                    const std::string& prefix) {
  if (n == 0) throw std::invalid_argument("rollout_set needs n >= 1");
  const PolicyActions actions(ps);
  std::mt19937_64 rng(seed);
  std::vector<stl::Trace> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(envs::record_rollout(spec, actions, rng(), true, prefix + "-" + std::to_string(k)));
  }
  return out;
}

void write_metrics_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,steps,mean_return,mean_cost,lambda\n";
  for (const auto& m : report.epochs) {
    out << m.epoch << ',' << m.steps << ',' << stl::format_real(m.mean_return) << ','
        << stl::format_real(m.mean_cost) << ',' << stl::format_real(m.lambda) << '\n';
  }
}

}  // namespace stlrl::policy
