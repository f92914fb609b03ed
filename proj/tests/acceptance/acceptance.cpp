// Acceptance checks, one per criterion. Usage:
//
//   acceptance [--work DIR] <criterion>...    criterion: 1..10 or "all"
//
// Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "stlrl/bo/bo.hpp"
#include "stlrl/envs/environment.hpp"
#include "stlrl/loop/loop.hpp"
#include "stlrl/policy/td3.hpp"
#include "stlrl/stl/parser.hpp"
#include "stlrl/stl/robustness.hpp"
#include "support/bo_oracle.hpp"
#include "support/finite_diff.hpp"
#include "support/stl_oracle.hpp"

using namespace stlrl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

fs::path g_work;

fs::path fresh_dir(const std::string& name) {
  const fs::path p = g_work / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 1. Module robustness equals the naive recursive evaluator.
Outcome stl_equivalence() {
  const auto t0 = Clock::now();
  testing::FormulaGenerator gen(20240601);
  double worst = 0.0;
  std::size_t mismatches = 0, unsound = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto f = gen.formula(5);
    const auto tr = gen.trace(50);
    const auto sig = stl::robustness_signal(f, tr);
    testing::Oracle oracle(tr);
    for (std::size_t t = 0; t < tr.size(); ++t) {
      const double want = oracle.rho(f, t);
      if (!testing::same_value(sig[t], want, 1e-9)) ++mismatches;
      if (std::isfinite(want)) worst = std::max(worst, std::abs(sig[t] - want));
      const bool sat = oracle.sat(f, t);
      if ((sig[t] > 0 && !sat) || (sig[t] < 0 && sat)) ++unsound;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && unsound == 0 && secs < 10.0,
          "1000 pairs, max |diff| " + fmt(worst, 3) + ", " + std::to_string(mismatches) + " mismatches, " +
              std::to_string(unsound) + " soundness violations, " + fmt(secs, 3) + " s (limit 10)"};
}

// 2. GP posterior against the dense-inverse oracle.
Outcome gp_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_mean = 0.0, worst_var = 0.0, worst_interp = 0.0, min_var = 1.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = 1 + trial % 4;
    const int n = 1 + static_cast<int>(rng() % 10);
    std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
    std::vector<double> ys(n);
    Eigen::MatrixXd x(n, dim);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < dim; ++d) x(i, d) = pts[i][d] = unit(rng);
      y[i] = ys[i] = unit(rng) * 2.0 - 1.0;
    }
    const Eigen::VectorXd ell = Eigen::VectorXd::Constant(dim, 0.2);
    const auto gp = bo::gp_fit(x, y, ell, 1e-6);
    const double noise = 1e-6 + gp.jitter_added;
    for (int q = 0; q < 10; ++q) {
      std::vector<double> qp(dim);
      Eigen::VectorXd qv(dim);
      for (int d = 0; d < dim; ++d) qv[d] = qp[d] = unit(rng);
      const auto [mu, var] = testing::oracle_posterior(pts, ys, qp, 0.2, noise);
      const auto p = bo::gp_predict(gp, qv);
      worst_mean = std::max(worst_mean, std::abs(p.mean - mu));
      worst_var = std::max(worst_var, std::abs(p.variance - std::max(0.0, var)));
      min_var = std::min(min_var, p.variance);
    }
    // Noise-free fit interpolates.
    const auto exact = bo::gp_fit(x, y, ell, 0.0);
    for (int i = 0; i < n; ++i) {
      const auto p = bo::gp_predict(exact, x.row(i).transpose());
      worst_interp = std::max(worst_interp, std::abs(p.mean - y[i]));
      min_var = std::min(min_var, p.variance);
    }
  }
  const double secs = seconds_since(t0);
  // Interpolation is exact up to the jitter a near-singular fit may add.
  const bool pass = worst_mean <= 1e-8 && worst_var <= 1e-8 && min_var >= 0.0 && worst_interp <= 1e-5 && secs < 10.0;
  return {pass, "200 datasets, max |mean diff| " + fmt(worst_mean, 3) + ", max |var diff| " + fmt(worst_var, 3) +
                    ", min var " + fmt(min_var, 3) + ", max interpolation error " + fmt(worst_interp, 3) + ", " +
                    fmt(secs, 3) + " s (limit 10)"};
}

// 3. Expected improvement.
Outcome ei_properties() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> mu(-5.0, 5.0), sg(0.0, 3.0);
  std::size_t negative = 0;
  for (int i = 0; i < 10000; ++i) {
    if (bo::expected_improvement(mu(rng), sg(rng), mu(rng)) < 0.0) ++negative;
  }
  const double ei = bo::expected_improvement(0.0, 1.0, 0.0);
  const double oracle = testing::oracle_ei(0.0, 1.0, 0.0);
  const double secs = seconds_since(t0);
  const bool pass = negative == 0 && std::abs(ei - 0.39894) <= 1e-4 && std::abs(ei - oracle) <= 1e-4 && secs < 5.0;
  return {pass, std::to_string(negative) + " negative of 10000, EI(mu=f_min, sigma=1) " + fmt(ei, 8) + ", oracle " +
                    fmt(oracle, 8) + ", " + fmt(secs, 3) + " s (limit 5)"};
}

// 4. BO reaches zero MCR on the synthetic circle dataset.
Outcome bo_separability() {
  const auto t0 = Clock::now();
  const auto tmpl = stl::parse_formula("G(not((x < p_lo) or (x > p_hi)))", {"x", "y", "u", "v"});
  const std::vector<envs::ParamBound> bounds = {{"p_lo", -3.0, 0.0}, {"p_hi", 0.0, 3.0}};
  bo::BoConfig cfg;
  cfg.budget = 60;
  int ok = 0;
  std::string evals;
  for (unsigned seed = 1; seed <= 10; ++seed) {
    const auto ds = testing::synthetic_circle_dataset(seed);
    const auto r = bo::optimize(tmpl, bounds, ds, cfg, seed);
    std::size_t first_zero = 0;
    for (const auto& e : r.history) {
      if (e.value == 0.0) {
        first_zero = e.iteration + 1;
        break;
      }
    }
    const bool hit = first_zero > 0 && first_zero <= 60 && bo::mcr_objective(tmpl, r.best, ds) == 0.0;
    ok += hit;
    evals += (evals.empty() ? "" : ",") + (hit ? std::to_string(first_zero) : std::string("-"));
  }
  const double secs = seconds_since(t0);
  return {ok >= 9 && secs < 120.0, std::to_string(ok) + "/10 seeds reach MCR 0 (evaluations: " + evals + "), " +
                                       fmt(secs, 3) + " s (limit 120)"};
}

// 5. Loss gradients against central differences on 2x8 networks.
Outcome gradient_checks() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto random_matrix = [&](Eigen::Index r, Eigen::Index c, double scale) {
    policy::Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * n01(rng);
    return m;
  };
  policy::Hyperparams hp;
  hp.hidden = {8, 8};
  const char* names[] = {"circle", "velocity", "goal3"};
  double worst = 0.0;
  int failures = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto spec = envs::make_spec(names[trial % 3]);
    auto ps = policy::make_policy_set(spec, hp, 500 + trial);
    const auto n = static_cast<Eigen::Index>(3 + trial % 6);
    const policy::Matrix obs = random_matrix(static_cast<Eigen::Index>(spec.obs_dim), n, 1.0);
    const policy::Matrix act = random_matrix(static_cast<Eigen::Index>(spec.action_dim()), n, 2.0);
    const policy::Vector y = random_matrix(n, 1, 3.0);
    const double lambda = 0.5 * (trial % 5);

    for (policy::Mlp* q : {&ps.critic1, &ps.cost_critic}) {
      policy::Params g = q->zeros_like();
      policy::critic_loss(*q, obs, act, y, &g);
      const auto fd = testing::central_difference(
          q->params().flatten(),
          [&](const std::vector<double>& flat) {
            policy::Mlp m = *q;
            m.params().assign(flat);
            return policy::critic_loss(m, obs, act, y, nullptr);
          },
          1e-5);
      const double err = testing::relative_error(g.flatten(), fd);
      worst = std::max(worst, err);
      failures += err > 1e-4;
    }

    policy::Params ga = ps.actor.zeros_like();
    policy::actor_loss(ps.actor, ps.critic1, ps.critic2, ps.cost_critic, lambda, obs, &ga);
    const auto fd = testing::central_difference(
        ps.actor.params().flatten(),
        [&](const std::vector<double>& flat) {
          policy::Mlp a = ps.actor;
          a.params().assign(flat);
          return policy::actor_loss(a, ps.critic1, ps.critic2, ps.cost_critic, lambda, obs, nullptr);
        },
        1e-5);
    const double err = testing::relative_error(ga.flatten(), fd);
    worst = std::max(worst, err);
    failures += err > 1e-4;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0, "50 configurations, worst relative error " + fmt(worst, 3) + " (limit 1e-4), " +
                                            fmt(secs, 3) + " s (limit 60)"};
}

// 6. Constrained training beats the unconstrained baseline on cost while
// keeping a share of its return.
Outcome velocity_ordering() {
  const auto spec = envs::make_spec("velocity");
  const auto truth = envs::true_constraint(spec);
  double cost_c = 0.0, cost_b = 0.0, ret_c = 0.0, ret_b = 0.0, slowest = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto t0 = Clock::now();
    auto hp = policy::Hyperparams::desk("velocity");
    hp.total_steps = 200000;
    hp.hidden = {64, 64};
    hp.constrained = true;
    const auto [con, rc] = policy::train(spec, truth, hp, seed);
    hp.constrained = false;
    const auto [base, rb] = policy::train(spec, truth, hp, seed);
    const auto ec = policy::evaluate_policy(spec, con, truth, 20, 1000 + seed);
    const auto eb = policy::evaluate_policy(spec, base, truth, 20, 1000 + seed);
    const double secs = seconds_since(t0);
    slowest = std::max(slowest, secs);
    cost_c += ec.mean_cost / 3;
    cost_b += eb.mean_cost / 3;
    ret_c += ec.mean_return / 3;
    ret_b += eb.mean_return / 3;
    per_seed += " seed " + std::to_string(seed) + ": constrained R " + fmt(ec.mean_return) + " C " +
                fmt(ec.mean_cost) + ", baseline R " + fmt(eb.mean_return) + " C " + fmt(eb.mean_cost) + " (" +
                fmt(secs, 3) + " s);";
    std::cerr << "criterion 6" << per_seed.substr(per_seed.rfind(" seed")) << std::endl;
  }
  const bool pass = cost_c <= 0.25 * cost_b && ret_c >= 0.25 * ret_b && slowest <= 1800.0;
  return {pass, "mean constrained cost " + fmt(cost_c) + " vs baseline " + fmt(cost_b) + " (limit 25%), return " +
                    fmt(ret_c) + " vs " + fmt(ret_b) + " (limit >= 25%), slowest seed " + fmt(slowest, 4) +
                    " s (limit 1800);" + per_seed};
}

struct LoopOutcome {
  loop::RunResult result;
  double seconds = 0.0;
  double heldout_mcr = 1.0;
};

// Balanced held-out set of plain scripted draws (no boundary selection),
// disjoint from the seed data by seed.
double heldout_mcr(const envs::EnvSpec& spec, const std::string& tmpl_text, const stl::Valuation& v,
                   std::uint64_t seed) {
  static std::map<std::pair<std::string, std::uint64_t>, bo::LabeledDataset> cache;
  auto& ds = cache[{spec.name, seed}];
  if (ds.size() == 0) ds = loop::sample_dataset(spec, 100, 100, 0x5eedULL * 7919 + seed);
  const auto tmpl = stl::parse_formula(tmpl_text, spec.state_dims);
  return bo::mcr_objective(tmpl, v, ds);
}

loop::LoopConfig acceptance_config(const std::string& env, std::uint64_t seed, const fs::path& out) {
  loop::LoopConfig c;
  c.env = env;
  c.delta = loop::default_delta(env);
  c.seed = seed;
  c.output_dir = out.string();
  c.n_rollouts = 50;
  if (env == "circle") {
    c.max_iterations = 15;
    c.training_steps = 40000;
  } else if (env == "velocity") {
    c.max_iterations = 10;
    c.training_steps = 60000;
  } else {
    c.max_iterations = 25;
    c.training_steps = 100000;
  }
  return c;
}

LoopOutcome run_loop(const loop::LoopConfig& cfg, std::uint64_t heldout_seed) {
  const auto t0 = Clock::now();
  loop::RunHooks hooks;
  hooks.log = [&](const std::string& m) { std::cerr << "  [" << cfg.env << " " << cfg.seed << "] " << m << std::endl; };
  LoopOutcome o{loop::run(cfg, hooks), 0.0, 1.0};
  o.seconds = seconds_since(t0);
  const auto spec = envs::make_spec(cfg.env);
  o.heldout_mcr = heldout_mcr(spec, spec.template_text, o.result.valuation, heldout_seed);
  return o;
}

std::string valuation_text(const stl::Valuation& v) {
  std::string s;
  for (const auto& [k, x] : v) s += (s.empty() ? "" : " ") + k + "=" + fmt(x);
  return s;
}

// 7. Full loop on circle.
Outcome circle_loop() {
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const auto cfg = acceptance_config("circle", seed, fresh_dir("c7_circle_seed" + std::to_string(seed)));
    const auto o = run_loop(cfg, seed);
    const auto& v = o.result.valuation;
    const double d_lo = std::abs(v.at("p_lo") - (-1.20)), d_hi = std::abs(v.at("p_hi") - 1.0);
    const bool ok = o.result.state.converged && o.result.state.iteration <= 15 && d_lo <= 0.3 && d_hi <= 0.3 &&
                    o.heldout_mcr <= 0.05 && o.seconds <= 3600.0;
    pass = pass && ok;
    detail += " seed " + std::to_string(seed) + (ok ? " ok" : " FAILED") + ": converged " +
              (o.result.state.converged ? "yes" : "no") + " after " + std::to_string(o.result.state.iteration) +
              " iterations (limit 15), " + valuation_text(v) + " (|err| " + fmt(d_lo, 3) + ", " + fmt(d_hi, 3) +
              ", limit 0.3), held-out MCR " + fmt(o.heldout_mcr, 3) + " (limit 0.05), " + fmt(o.seconds, 4) +
              " s (limit 3600);";
  }
  return {pass, detail.substr(1)};
}

// 8. Full loop on velocity.
Outcome velocity_loop() {
  const auto cfg = acceptance_config("velocity", 1, fresh_dir("c8_velocity"));
  const auto o = run_loop(cfg, 1);
  const double err = std::abs(o.result.valuation.at("p_max") - 3.2096);
  const bool pass = o.result.state.converged && o.result.state.iteration <= 10 && err <= 0.2 && o.seconds <= 2700.0;
  return {pass, std::string("converged ") + (o.result.state.converged ? "yes" : "no") + " after " +
                    std::to_string(o.result.state.iteration) + " iterations (limit 10), " +
                    valuation_text(o.result.valuation) + " (|err| " + fmt(err, 3) + ", limit 0.2), held-out MCR " +
                    fmt(o.heldout_mcr, 3) + ", " + fmt(o.seconds, 4) + " s (limit 2700)"};
}

// 9. Full loop on the three-hazard goal task.
Outcome goal_loop() {
  const auto cfg = acceptance_config("goal3", 1, fresh_dir("c9_goal3"));
  const auto o = run_loop(cfg, 1);
  const bool pass =
      o.result.state.converged && o.result.state.iteration <= 25 && o.heldout_mcr <= 0.1 && o.seconds <= 7200.0;
  return {pass, std::string("converged ") + (o.result.state.converged ? "yes" : "no") + " after " +
                    std::to_string(o.result.state.iteration) + " iterations (limit 25), held-out MCR " +
                    fmt(o.heldout_mcr, 3) + " (limit 0.1), " + valuation_text(o.result.valuation) + ", " +
                    fmt(o.seconds, 4) + " s (limit 7200)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Loop invariants and reproducibility.
Outcome loop_invariants() {
  const auto t0 = Clock::now();
  auto make = [&](const std::string& name) {
    auto c = acceptance_config("circle", 3, fresh_dir(name));
    c.training_steps = 3000;
    c.max_iterations = 3;
    c.delta = 0.95;
    return c;
  };
  const auto ca = make("c10_a"), cb = make("c10_b");
  const auto a = loop::run(ca);
  const auto b = loop::run(cb);
  const auto& st = a.state;
  bool growth = st.iteration >= 1 && st.records.size() == st.iteration;
  bool alpha_range = true;
  std::size_t prev = 20;
  std::string sizes = std::to_string(prev);
  for (const auto& r : st.records) {
    const std::size_t now = r.dataset_safe + r.dataset_unsafe;
    growth = growth && now == prev + 50 && r.n_safe + r.n_unsafe == 50;
    alpha_range = alpha_range && r.alpha >= 0.0 && r.alpha <= 1.0;
    prev = now;
    sizes += "," + std::to_string(now);
  }
  growth = growth && st.safe.size() + st.unsafe.size() == prev;
  const std::string sa = slurp(fs::path(ca.output_dir) / "state.json");
  const bool identical = !sa.empty() && sa == slurp(fs::path(cb.output_dir) / "state.json");
  const double secs = seconds_since(t0);
  return {growth && alpha_range && identical,
          std::to_string(st.iteration) + " iterations, dataset sizes " + sizes + " (growth 50 each: " +
              (growth ? "yes" : "no") + "), alpha in [0,1]: " + (alpha_range ? "yes" : "no") +
              ", state.json byte-identical across runs: " + (identical ? "yes" : "no") + ", " + fmt(secs, 3) + " s"};
}

struct Entry {
  int id;
  const char* name;
  std::function<Outcome()> fn;
};

const std::vector<Entry> kCriteria = {
    {1, "stl oracle equivalence", stl_equivalence},
    {2, "gp correctness", gp_correctness},
    {3, "expected improvement properties", ei_properties},
    {4, "bo separability", bo_separability},
    {5, "gradient checks", gradient_checks},
    {6, "constrained vs unconstrained ordering (velocity)", velocity_ordering},
    {7, "end-to-end loop, circle", circle_loop},
    {8, "end-to-end loop, velocity", velocity_loop},
    {9, "end-to-end loop, goal with 3 hazards", goal_loop},
    {10, "loop invariants", loop_invariants},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> picks;
  g_work = fs::temp_directory_path() / "stlrl-acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else if (a == "all") {
      for (const auto& e : kCriteria) picks.push_back(e.id);
    } else {
      picks.push_back(std::stoi(a));
    }
  }
  if (picks.empty()) {
    std::cerr << "usage: acceptance [--work DIR] <1..10|all>..." << std::endl;
    return 2;
  }
  fs::create_directories(g_work);
  bool all_pass = true;
  for (int id : picks) {
    const auto it = std::find_if(kCriteria.begin(), kCriteria.end(), [&](const Entry& e) { return e.id == id; });
    if (it == kCriteria.end()) {
      std::cerr << "unknown criterion " << id << std::endl;
      return 2;
    }
    Outcome o;
    try {
      o = it->fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && o.pass;
    std::cout << "criterion " << id << " (" << it->name << "): " << (o.pass ? "PASS" : "FAIL") << " | " << o.detail
              << std::endl;
  }
  return all_pass ? 0 : 1;
}
