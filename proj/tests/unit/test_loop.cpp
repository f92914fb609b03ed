#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "stlrl/labels/label_store.hpp"
#include "stlrl/loop/loop.hpp"
#include "stlrl/server/label_server.hpp"
#include "support/temp_dir.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines _res.
#include "httplib.h"

using namespace stlrl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

stl::Trace circle_trace(double x_max, double x_min = -0.5) {
  stl::Trace tr({"x", "y", "u", "v"}, 0.02, "t");
  for (double x : {x_min, 0.0, x_max, 0.1}) {
    const double s[4] = {x, 0.0, 0.0, 0.0};
    tr.push_back(s);
  }
  return tr;
}

// Independent safety check for the circle task: every x within [-1.2, 1].
bool circle_inside(const stl::Trace& tr) {
  for (std::size_t t = 0; t < tr.size(); ++t) {
    const double x = tr.at(t, 0);
    if (!(x > -1.2 && x < 1.0)) return false;
  }
  return true;
}

// Small enough to run a couple of iterations in a few seconds.
loop::LoopConfig tiny_config(const fs::path& out) {
  loop::LoopConfig c;
  c.env = "velocity";
  c.delta = 0.9;
  c.n_rollouts = 5;
  c.training_steps = 600;
  c.training = {{"hidden", {8, 8}}, {"batch_size", 16}, {"warmup_steps", 200}, {"steps_per_epoch", 200},
                {"eval_episodes", 1}};
  c.bo_budget = 12;
  c.max_iterations = 2;
  c.seed = 7;
  c.output_dir = out.string();
  return c;
}

}  // namespace

TEST_CASE("compute_alpha") {
  CHECK(loop::compute_alpha(45, 5) == doctest::Approx(0.9));
  CHECK(loop::compute_alpha(0, 50) == 0.0);
  CHECK(loop::compute_alpha(10, 30) == doctest::Approx(0.25));
  CHECK(loop::compute_alpha(1, 0) == 1.0);
  CHECK_THROWS_AS(loop::compute_alpha(0, 0), std::invalid_argument);
}

TEST_CASE("oracle_label uses strict satisfaction") {
  const auto spec = envs::make_spec("circle");
  CHECK(loop::oracle_label(spec, circle_trace(0.5)) == 1);   // rho 0.5
  CHECK(loop::oracle_label(spec, circle_trace(1.1)) == 0);   // rho -0.1
  CHECK(loop::oracle_label(spec, circle_trace(1.0)) == 0);   // rho 0
  CHECK(loop::oracle_label(spec, circle_trace(0.2, -1.3)) == 0);
}

TEST_CASE("seed_datasets meets the requested counts with verified labels") {
  const auto spec = envs::make_spec("circle");
  const auto ds = loop::seed_datasets(spec, 10, 10, 3);
  CHECK(ds.size() == 20);
  REQUIRE(ds.safe.size() == 10);
  REQUIRE(ds.unsafe.size() == 10);
  for (const auto& tr : ds.safe) CHECK(circle_inside(tr));
  for (const auto& tr : ds.unsafe) CHECK_FALSE(circle_inside(tr));
  for (const auto& tr : ds.safe) CHECK(tr.size() == spec.horizon);
  CHECK_NOTHROW(ds.validate());
  CHECK(loop::seed_datasets(spec, 10, 10, 3).safe == ds.safe);
  CHECK(loop::seed_datasets(spec, 10, 10, 4).safe != ds.safe);
  CHECK_THROWS_AS(loop::seed_datasets(spec, 0, 10, 3), std::invalid_argument);
  CHECK_THROWS_AS(loop::seed_datasets(spec, 10, 0, 3), std::invalid_argument);
}

TEST_CASE("seed_datasets for velocity and reduced goal") {
  for (const std::string env : {"velocity", "goal3"}) {
    const auto spec = envs::make_spec(env);
    const auto ds = loop::seed_datasets(spec, 6, 4, 11);
    CHECK(ds.safe.size() == 6);
    CHECK(ds.unsafe.size() == 4);
    for (const auto& tr : ds.safe) CHECK(loop::oracle_label(spec, tr) == 1);
    for (const auto& tr : ds.unsafe) CHECK(loop::oracle_label(spec, tr) == 0);
  }
  // Velocity: safe means the speed never reaches 3.2096.
  const auto spec = envs::make_spec("velocity");
  for (const auto& tr : loop::seed_datasets(spec, 5, 5, 2).safe) {
    for (std::size_t t = 0; t < tr.size(); ++t) CHECK(tr.at(t, 1) < 3.2096);
  }
}

TEST_CASE("selected seeds bracket the velocity limit tighter than plain draws") {
  const auto spec = envs::make_spec("velocity");
  auto peak = [](const stl::Trace& tr) {
    double m = -1e300;
    for (std::size_t t = 0; t < tr.size(); ++t) m = std::max(m, tr.at(t, 1));
    return m;
  };
  auto gap = [&](const bo::LabeledDataset& ds) {
    double hi_safe = -1e300, lo_unsafe = 1e300;
    for (const auto& tr : ds.safe) hi_safe = std::max(hi_safe, peak(tr));
    for (const auto& tr : ds.unsafe) lo_unsafe = std::min(lo_unsafe, peak(tr));
    CHECK(hi_safe < 3.2096);
    CHECK(lo_unsafe >= 3.2096);
    return lo_unsafe - hi_safe;
  };
  double selected = 0.0, plain = 0.0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    selected += gap(loop::seed_datasets(spec, 10, 10, s));
    plain += gap(loop::sample_dataset(spec, 10, 10, s));
  }
  CHECK(selected < 0.5 * plain);
  CHECK(loop::sample_dataset(spec, 4, 4, 9).safe == loop::sample_dataset(spec, 4, 4, 9).safe);
}

TEST_CASE("dataset directories round-trip") {
  testing::TempDir dir("dataset");
  const auto ds = loop::seed_datasets(envs::make_spec("velocity"), 3, 2, 5);
  loop::save_dataset(ds, dir.path());
  const auto back = loop::load_dataset(dir.path());
  CHECK(back.safe == ds.safe);
  CHECK(back.unsafe == ds.unsafe);
  CHECK_THROWS(loop::load_dataset(dir.path() / "missing"));
}

TEST_CASE("config parsing") {
  auto c = loop::config_from_json({{"env", "goal3"}});
  CHECK(c.delta == 0.75);
  CHECK(c.n_rollouts == 50);
  CHECK(c.max_iterations == 30);
  CHECK(c.labeling == loop::LabelingMode::Oracle);
  CHECK(loop::config_from_json({{"env", "circle"}}).delta == 0.9);
  CHECK(loop::config_from_json({{"env", "velocity"}}).delta == 0.9);
  CHECK(loop::config_from_json({{"labeling", "human"}}).labeling == loop::LabelingMode::Human);

  CHECK_THROWS_AS(loop::config_from_json({{"delta", 1.0}}), loop::ConfigError);
  CHECK_THROWS_AS(loop::config_from_json({{"delta", 0.0}}), loop::ConfigError);
  CHECK_THROWS_AS(loop::config_from_json({{"n_rollouts", 0}}), loop::ConfigError);
  CHECK_THROWS_AS(loop::config_from_json({{"max_iterations", 0}}), loop::ConfigError);
  CHECK_THROWS_AS(loop::config_from_json({{"labeling", "crowd"}}), loop::ConfigError);
  CHECK_THROWS_AS(loop::config_from_json({{"deltaa", 0.5}}), loop::ConfigError);
  CHECK_THROWS_AS(loop::config_from_json({{"n_rollouts", "many"}}), loop::ConfigError);

  testing::TempDir dir("config");
  c = tiny_config(dir.path() / "out");
  c.template_file = "tmpl.txt";
  c.display = {{"u_guide", 3.0}};
  const auto again = loop::config_from_json(loop::to_json(c));
  CHECK(loop::to_json(again) == loop::to_json(c));
}

TEST_CASE("load_config resolves paths and names a missing template file") {
  testing::TempDir dir("load_config");
  {
    std::ofstream out(dir.path() / "cfg.json");
    out << R"({"env": "circle", "template_file": "nope.stl", "output_dir": "runs/a"})";
  }
  const auto c = loop::load_config(dir.path() / "cfg.json");
  CHECK(c.output_dir == (dir.path() / "runs/a").string());
  try {
    loop::resolve_problem(c);
    FAIL("expected ConfigError");
  } catch (const loop::ConfigError& e) {
    CHECK(std::string(e.what()).find((dir.path() / "nope.stl").string()) != std::string::npos);
  }
  CHECK_THROWS_AS(loop::load_config(dir.path() / "absent.json"), loop::ConfigError);
  {
    std::ofstream out(dir.path() / "bad.json");
    out << "{not json";
  }
  CHECK_THROWS_AS(loop::load_config(dir.path() / "bad.json"), loop::ConfigError);
}

TEST_CASE("resolve_problem") {
  loop::LoopConfig c;
  c.env = "circle";
  auto p = loop::resolve_problem(c);
  CHECK(p.bounds.size() == 2);
  CHECK(stl::free_parameters(p.tmpl) == std::vector<std::string>{"p_lo", "p_hi"});
  c.template_text = "G(not(x > p_a))";
  CHECK_THROWS_AS(loop::resolve_problem(c), loop::ConfigError);
  c.bounds = {{"p_a", 0.0, 2.0}};
  CHECK_NOTHROW(loop::resolve_problem(c));
  c.template_text = "G(not(z > p_a))";
  CHECK_THROWS_AS(loop::resolve_problem(c), loop::ConfigError);

  CHECK(loop::resolve_bo(c, 2).budget == 80);
  CHECK(loop::resolve_bo(c, 6).budget == 150);
  c.training_steps = 1234;
  CHECK(loop::resolve_training(c).total_steps == 1234);
}

TEST_CASE("loop state json round-trips") {
  loop::LoopState s;
  s.iteration = 1;
  s.initial_alpha = 0.5;
  s.safe = {"seed/safe/a.csv"};
  s.unsafe = {"seed/unsafe/b.csv", "iter_1/rollouts/it1-0.csv"};
  loop::IterationRecord r;
  r.iteration = 1;
  r.valuation = {{"p_max", 3.1}};
  r.mcr = 0.0;
  r.alpha = 0.0;
  r.checkpoint = "iter_1/policy_checkpoint.json";
  r.rollout_ids = {"it1-0"};
  r.n_unsafe = 1;
  r.dataset_safe = 1;
  r.dataset_unsafe = 2;
  s.records.push_back(r);
  CHECK(loop::to_json(loop::state_from_json(loop::to_json(s))) == loop::to_json(s));
  CHECK(s.alpha_history() == std::vector<double>{0.0});
}

TEST_CASE("oracle run: dataset growth, alpha range and artifacts") {
  testing::TempDir dir("run");
  auto cfg = tiny_config(dir.path() / "r");
  const auto res = loop::run(cfg);
  const auto& st = res.state;
  REQUIRE(st.iteration >= 1);
  CHECK(st.iteration <= cfg.max_iterations);
  CHECK(st.records.size() == st.iteration);
  CHECK(st.initial_alpha == 0.5);
  std::size_t prev = 20;
  for (const auto& r : st.records) {
    CHECK(r.dataset_safe + r.dataset_unsafe == prev + cfg.n_rollouts);
    prev = r.dataset_safe + r.dataset_unsafe;
    CHECK(r.alpha >= 0.0);
    CHECK(r.alpha <= 1.0);
    CHECK(r.n_safe + r.n_unsafe == cfg.n_rollouts);
    CHECK(r.rollout_ids.size() == cfg.n_rollouts);
    const fs::path it = dir.path() / "r" / ("iter_" + std::to_string(r.iteration));
    for (const char* f : {"valuation.json", "bo_history.csv", "policy_checkpoint.json", "labels.json", "metrics.csv"}) {
      CHECK(fs::exists(it / f));
    }
    for (const auto& id : r.rollout_ids) CHECK(fs::exists(it / "rollouts" / (id + ".csv")));
  }
  CHECK(st.safe.size() + st.unsafe.size() == prev);
  CHECK(st.converged == (st.records.back().alpha >= cfg.delta));
  CHECK(fs::exists(res.checkpoint));

  // Every rollout landed on the side its label says.
  const auto labels = json::parse(slurp(dir.path() / "r" / "iter_1" / "labels.json"))["labels"];
  for (const auto& id : st.records[0].rollout_ids) {
    const std::string rel = "iter_1/rollouts/" + id + ".csv";
    const bool in_safe = std::find(st.safe.begin(), st.safe.end(), rel) != st.safe.end();
    const bool in_unsafe = std::find(st.unsafe.begin(), st.unsafe.end(), rel) != st.unsafe.end();
    CHECK(in_safe != in_unsafe);
    CHECK(in_safe == (labels[id] == 1));
  }

  const auto status = labels::LabelStore(dir.path() / "r" / "labels").read_status();
  CHECK(status["iteration"] == st.iteration);
  CHECK(status["alpha_history"].size() == st.iteration);
}

TEST_CASE("oracle runs are reproducible and resumable") {
  testing::TempDir dir("repro");
  auto a = tiny_config(dir.path() / "a");
  auto b = tiny_config(dir.path() / "b");
  auto c = tiny_config(dir.path() / "c");
  loop::run(a);
  loop::run(b);
  const std::string sa = slurp(dir.path() / "a" / "state.json");
  CHECK(sa == slurp(dir.path() / "b" / "state.json"));
  CHECK(slurp(dir.path() / "a" / "iter_1" / "policy_checkpoint.json") ==
        slurp(dir.path() / "b" / "iter_1" / "policy_checkpoint.json"));

  // Interrupt c after the first synthesis, then resume.
  loop::RunHooks crash;
  crash.log = [](const std::string& m) {
    if (m.starts_with("iteration 1: G")) throw std::runtime_error("interrupted");
  };
  CHECK_THROWS(loop::run(c, crash));
  CHECK(loop::load_state(dir.path() / "c").iteration == 0);
  CHECK(fs::exists(dir.path() / "c" / "iter_1" / "valuation.json"));
  CHECK_FALSE(fs::exists(dir.path() / "c" / "iter_1" / "policy_checkpoint.json"));
  loop::run(c);
  CHECK(slurp(dir.path() / "c" / "state.json") == sa);

  // A different config cannot reuse the directory.
  auto other = tiny_config(dir.path() / "a");
  other.seed = 8;
  CHECK_THROWS_AS(loop::run(other), loop::ConfigError);
}

TEST_CASE("one iteration always runs even when the seed alpha already passes delta") {
  testing::TempDir dir("one_iter");
  auto cfg = tiny_config(dir.path() / "r");
  cfg.delta = 0.4;
  cfg.labeling = loop::LabelingMode::Human;
  cfg.poll_interval_ms = 10;
  // A scripted expert calls every rollout safe.
  labels::LabelStore store(dir.path() / "r" / "labels");
  std::atomic<bool> done{false};
  std::thread expert([&] {
    while (!done) {
      for (const auto& t : store.pending()) store.post_label(t.id, 1);
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  });
  const auto res = loop::run(cfg);
  done = true;
  expert.join();
  CHECK(res.state.initial_alpha == 0.5);
  CHECK(res.state.iteration == 1);
  CHECK(res.state.converged);
  CHECK(res.state.records[0].alpha == 1.0);
  CHECK(res.chosen_iteration == 1);
}

TEST_CASE("human mode over http: posted labels reach the loop unchanged") {
  testing::TempDir dir("human");
  auto cfg = tiny_config(dir.path() / "r");
  cfg.labeling = loop::LabelingMode::Human;
  cfg.max_iterations = 1;
  cfg.poll_interval_ms = 10;
  cfg.display = {{"guide", {{"axis", "u"}, {"value", 3.0}}}};
  labels::LabelStore store(dir.path() / "r" / "labels");
  server::LabelServer srv(store);
  const int port = srv.start("127.0.0.1", 0);

  std::map<std::string, int> posted;
  std::thread expert([&] {
    httplib::Client cli("127.0.0.1", port);
    std::size_t i = 0;
    while (posted.size() < cfg.n_rollouts) {
      auto r = cli.Get("/api/traces/pending");
      if (!r) continue;
      const json body = json::parse(r->body);
      for (const auto& t : body["tasks"]) {
        CHECK(t["geometry"] == cfg.display);
        const int label = static_cast<int>(i++ % 2);
        auto p = cli.Post("/api/traces/" + t["id"].get<std::string>() + "/label",
                          json{{"label", label}}.dump(), "application/json");
        if (p && p->status == 200) posted[t["id"].get<std::string>()] = label;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  });
  const auto res = loop::run(cfg);
  expert.join();

  const auto saved = json::parse(slurp(dir.path() / "r" / "iter_1" / "labels.json"))["labels"];
  REQUIRE(saved.size() == posted.size());
  for (const auto& [id, label] : posted) CHECK(saved[id] == label);
  std::size_t safe = 0;
  for (const auto& [id, label] : posted) safe += label;
  CHECK(res.state.records[0].n_safe == safe);
  CHECK(res.state.records[0].alpha == doctest::Approx(static_cast<double>(safe) / cfg.n_rollouts));

  httplib::Client cli("127.0.0.1", port);
  const auto st = json::parse(cli.Get("/api/status")->body);
  CHECK(st["pending"] == 0);
  CHECK(st["labeled"] == cfg.n_rollouts);
  CHECK(st["alpha_history"].size() == 1);
  CHECK(st["converged"] == res.state.converged);
  srv.stop();
}

TEST_CASE("non-convergence is a status, not an error") {
  testing::TempDir dir("noconv");
  auto cfg = tiny_config(dir.path() / "r");
  cfg.labeling = loop::LabelingMode::Human;
  cfg.poll_interval_ms = 10;
  labels::LabelStore store(dir.path() / "r" / "labels");
  std::atomic<bool> done{false};
  std::thread expert([&] {
    while (!done) {
      for (const auto& t : store.pending()) store.post_label(t.id, t.iteration == 1 ? (t.id.back() == '0') : 0);
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  });
  const auto res = loop::run(cfg);
  done = true;
  expert.join();
  CHECK_FALSE(res.state.converged);
  CHECK(res.state.iteration == 2);
  CHECK(res.state.alpha_history() == std::vector<double>{0.2, 0.0});
  CHECK(res.chosen_iteration == 1);
}
