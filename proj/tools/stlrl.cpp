// stlrl: loop driver, labeling server and evaluation utilities.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "stlrl/bo/bo.hpp"
#include "stlrl/labels/label_store.hpp"
#include "stlrl/loop/loop.hpp"
#include "stlrl/policy/checkpoint.hpp"
#include "stlrl/server/label_server.hpp"
#include "stlrl/stl/parser.hpp"

namespace fs = std::filesystem;
using namespace stlrl;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_run(const std::string& config, const std::string& output, bool quiet) {
  loop::LoopConfig cfg = loop::load_config(config);
  if (!output.empty()) cfg.output_dir = output;
  loop::RunHooks hooks;
  if (!quiet) hooks.log = [](const std::string& m) { std::cerr << m << std::endl; };
  const auto r = loop::run(cfg, hooks);
  json out = {{"converged", r.state.converged},
              {"iterations", r.state.iteration},
              {"chosen_iteration", r.chosen_iteration},
              {"valuation", r.valuation},
              {"checkpoint", r.checkpoint.string()},
              {"alpha_history", r.state.alpha_history()}};
  std::cout << out.dump(2) << std::endl;
  return r.state.converged ? 0 : 3;
}

server::LabelServer* g_server = nullptr;

int cmd_serve(const std::string& run_dir, const std::string& store_dir, const std::string& host, int port) {
  const fs::path root = store_dir.empty() ? fs::path(run_dir) / "labels" : fs::path(store_dir);
  labels::LabelStore store(root);
  server::LabelServer srv(store);
  g_server = &srv;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving " << root.string() << " on http://" << host << ":" << port << std::endl;
  srv.listen(host, port);
  g_server = nullptr;
  return 0;
}

struct EvalArgs {
  std::string env = "circle";
  std::string formula, formula_file;
  bool true_constraint = false;
  std::string dataset, run_dir;
  std::size_t seed_safe = 0, seed_unsafe = 0;
  std::uint64_t seed = 1;
  bool as_json = false;
};

int cmd_eval(const EvalArgs& a) {
  const auto spec = envs::make_spec(a.env);
  stl::Formula f;
  std::string text;
  const int sources = !a.formula.empty() + !a.formula_file.empty() + a.true_constraint;
  if (sources != 1) throw std::runtime_error("give exactly one of --formula, --formula-file, --true-constraint");
  if (a.true_constraint) {
    f = envs::true_constraint(spec);
  } else {
    text = a.formula.empty() ? read_file(a.formula_file) : a.formula;
    f = stl::parse_formula(text, spec.state_dims);
  }
  if (!stl::is_ground(f)) throw std::runtime_error("formula still has free parameters");

  bo::LabeledDataset ds;
  std::string source;
  if (!a.dataset.empty()) {
    ds = loop::load_dataset(a.dataset);
    source = a.dataset;
  } else if (!a.run_dir.empty()) {
    ds = loop::load_run_dataset(a.run_dir, loop::load_state(a.run_dir));
    source = a.run_dir;
  } else if (a.seed_safe > 0 && a.seed_unsafe > 0) {
    ds = loop::sample_dataset(spec, a.seed_safe, a.seed_unsafe, a.seed);
    source = "seeded(" + std::to_string(a.seed_safe) + "," + std::to_string(a.seed_unsafe) + "," +
             std::to_string(a.seed) + ")";
  } else {
    throw std::runtime_error("give --dataset, --run or --seed-safe/--seed-unsafe");
  }
  ds.validate();
  const auto c = bo::classify(f, ds);
  if (a.as_json) {
    std::cout << json{{"formula", stl::to_string(f)},
                      {"dataset", source},
                      {"safe", ds.safe.size()},
                      {"unsafe", ds.unsafe.size()},
                      {"safe_correct", c.safe_correct},
                      {"safe_wrong", c.safe_wrong},
                      {"unsafe_correct", c.unsafe_correct},
                      {"unsafe_wrong", c.unsafe_wrong},
                      {"mcr", c.mcr()}}
                     .dump(2)
              << std::endl;
  } else {
    std::cout << "formula  " << stl::to_string(f) << "\n"
              << "dataset  " << source << " (" << ds.safe.size() << " safe, " << ds.unsafe.size() << " unsafe)\n"
              << "              predicted safe  predicted unsafe\n"
              << "labeled safe   " << c.safe_correct << "  " << c.safe_wrong << "\n"
              << "labeled unsafe " << c.unsafe_wrong << "  " << c.unsafe_correct << "\n"
              << "MCR      " << stl::format_real(c.mcr()) << std::endl;
  }
  return 0;
}

struct TrainArgs {
  std::string env = "velocity";
  std::string mode = "unconstrained";
  std::string profile = "desk";
  std::size_t steps = 0;
  std::uint64_t seed = 1;
  std::size_t eval_episodes = 20;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  const auto spec = envs::make_spec(a.env);
  auto hp = a.profile == "published" ? policy::Hyperparams::published(a.env) : policy::Hyperparams::desk(a.env);
  if (a.steps > 0) hp.total_steps = a.steps;
  hp.constrained = a.mode == "true";
  // Costs are always measured against the hidden constraint here; this is
  // an evaluation harness, not part of the learning loop.
  const auto truth = envs::true_constraint(spec);
  policy::TrainOptions opts;
  opts.on_epoch = [](const policy::EpochMetrics& m) {
    if (m.epoch % 20 == 0) {
      std::cerr << "epoch " << m.epoch << " steps " << m.steps << " return " << m.mean_return << " cost "
                << m.mean_cost << " lambda " << m.lambda << std::endl;
    }
  };
  auto [ps, report] = policy::train(spec, truth, hp, a.seed, opts);
  const auto e = policy::evaluate_policy(spec, ps, truth, a.eval_episodes, a.seed * 7919 + 1);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    policy::save_checkpoint(ps, fs::path(a.out) / "policy_checkpoint.json");
    policy::write_metrics_csv(report, fs::path(a.out) / "metrics.csv");
  }
  std::cout << json{{"env", a.env},
                    {"mode", a.mode},
                    {"steps", report.steps},
                    {"mean_return", e.mean_return},
                    {"mean_cost", e.mean_cost},
                    {"lambda", ps.lambda}}
                   .dump(2)
            << std::endl;
  return 0;
}

int cmd_report(const std::string& run_dir, const std::string& out_dir) {
  const fs::path run(run_dir);
  const fs::path out = out_dir.empty() ? run / "report" : fs::path(out_dir);
  fs::create_directories(out);
  const auto state = loop::load_state(run);

  std::ofstream alpha(out / "alpha.csv");
  alpha << "iteration,alpha,n_safe,n_unsafe,dataset_safe,dataset_unsafe,mcr\n";
  for (const auto& r : state.records) {
    alpha << r.iteration << ',' << stl::format_real(r.alpha) << ',' << r.n_safe << ',' << r.n_unsafe << ','
          << r.dataset_safe << ',' << r.dataset_unsafe << ',' << stl::format_real(r.mcr) << '\n';
  }

  // BO curves: objective per evaluation and best so far, across iterations.
  std::ofstream bo(out / "bo_curves.csv");
  bo << "iteration,evaluation,mcr,best_so_far\n";
  std::ofstream train(out / "training_curves.csv");
  train << "iteration,epoch,steps,mean_return,mean_cost,lambda\n";
  for (const auto& r : state.records) {
    const fs::path it = run / ("iter_" + std::to_string(r.iteration));
    if (std::ifstream in(it / "bo_history.csv"); in) {
      std::string line;
      std::getline(in, line);
      double best = 1.0;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto first = line.find(',');
        const auto last = line.rfind(',');
        const double v = stl::parse_real(line.substr(last + 1));
        best = std::min(best, v);
        bo << r.iteration << ',' << line.substr(0, first) << ',' << stl::format_real(v) << ','
           << stl::format_real(best) << '\n';
      }
    }
    if (std::ifstream in(it / "metrics.csv"); in) {
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (!line.empty()) train << r.iteration << ',' << line << '\n';
      }
    }
  }
  std::cout << "wrote " << (out / "alpha.csv").string() << ", " << (out / "bo_curves.csv").string() << ", "
            << (out / "training_curves.csv").string() << std::endl;
  return 0;
}

int cmd_seed(const std::string& env, std::size_t n_safe, std::size_t n_unsafe, std::uint64_t seed,
             const std::string& out) {
  const auto spec = envs::make_spec(env);
  const auto ds = loop::seed_datasets(spec, n_safe, n_unsafe, seed);
  loop::save_dataset(ds, out);
  std::cout << "wrote " << ds.safe.size() << " safe and " << ds.unsafe.size() << " unsafe traces to " << out
            << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STL-constrained reinforcement learning with learned constraints"};
  app.require_subcommand(1);

  std::string config, output;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run the joint constraint and policy learning loop");
  run->add_option("-c,--config", config, "Loop config (JSON)")->required();
  run->add_option("-o,--output", output, "Override the output directory");
  run->add_flag("-q,--quiet", quiet, "No progress messages");

  std::string serve_run, serve_store, host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("label-serve", "Serve the labeling API for human mode");
  serve->add_option("--run", serve_run, "Run directory (uses <run>/labels)");
  serve->add_option("--store", serve_store, "Label store directory");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("-p,--port", port, "Port");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval-stl", "Score a ground STL formula against a labeled dataset");
  eval->add_option("--env", ev.env, "Environment (declares signal names)");
  eval->add_option("-f,--formula", ev.formula, "Formula text");
  eval->add_option("--formula-file", ev.formula_file, "File with the formula");
  eval->add_flag("--true-constraint", ev.true_constraint, "Use the hidden constraint (evaluation only)");
  eval->add_option("--dataset", ev.dataset, "Directory with safe/ and unsafe/ traces");
  eval->add_option("--run", ev.run_dir, "Run directory; uses its cumulative dataset");
  eval->add_option("--seed-safe", ev.seed_safe, "Generate this many safe traces");
  eval->add_option("--seed-unsafe", ev.seed_unsafe, "Generate this many unsafe traces");
  eval->add_option("--seed", ev.seed, "Seed for generated traces");
  eval->add_flag("--json", ev.as_json, "JSON output");

  TrainArgs tr;
  auto* train = app.add_subcommand("train-only", "Train a baseline policy");
  train->add_option("--env", tr.env, "Environment");
  train->add_option("--mode", tr.mode, "unconstrained or true")->check(CLI::IsMember({"unconstrained", "true"}));
  train->add_option("--profile", tr.profile, "desk or published")->check(CLI::IsMember({"desk", "published"}));
  train->add_option("--steps", tr.steps, "Environment steps (0: profile default)");
  train->add_option("--seed", tr.seed, "Seed");
  train->add_option("--eval-episodes", tr.eval_episodes, "Final evaluation episodes");
  train->add_option("-o,--out", tr.out, "Directory for checkpoint and metrics");

  std::string report_run, report_out;
  auto* report = app.add_subcommand("report", "Write learning-curve CSVs for a run");
  report->add_option("--run", report_run, "Run directory")->required();
  report->add_option("-o,--out", report_out, "Output directory (default <run>/report)");

  std::string seed_env = "circle", seed_out;
  std::size_t seed_safe = 10, seed_unsafe = 10;
  std::uint64_t seed_seed = 1;
  auto* seed = app.add_subcommand("seed-data", "Generate an oracle-labeled scripted dataset");
  seed->add_option("--env", seed_env, "Environment");
  seed->add_option("--safe", seed_safe, "Safe traces");
  seed->add_option("--unsafe", seed_unsafe, "Unsafe traces");
  seed->add_option("--seed", seed_seed, "Seed");
  seed->add_option("-o,--out", seed_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, output, quiet);
    if (*serve) {
      if (serve_run.empty() == serve_store.empty()) throw std::runtime_error("give exactly one of --run, --store");
      return cmd_serve(serve_run, serve_store, host, port);
    }
    if (*eval) return cmd_eval(ev);
    if (*train) return cmd_train(tr);
    if (*report) return cmd_report(report_run, report_out);
    if (*seed) return cmd_seed(seed_env, seed_safe, seed_unsafe, seed_seed, seed_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}
