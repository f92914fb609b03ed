#include "stlrl/loop/loop.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "stlrl/labels/label_store.hpp"
#include "stlrl/policy/checkpoint.hpp"
#include "stlrl/stl/parser.hpp"
#include "stlrl/stl/robustness.hpp"

namespace stlrl::loop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Stage : std::uint64_t { kSeedStage = 1, kBoStage = 2, kTrainStage = 3, kRolloutStage = 4 };

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, Stage stage, std::size_t iteration) {
  return splitmix(splitmix(seed) ^ splitmix((static_cast<std::uint64_t>(stage) << 32) + iteration));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { labels::write_file_atomic(path, j.dump(2) + "\n"); }

json valuation_json(const stl::Valuation& v) {
  json j = json::object();
  for (const auto& [k, x] : v) j[k] = x;
  return j;
}

stl::Valuation valuation_from(const json& j) {
  stl::Valuation v;
  for (const auto& [k, x] : j.items()) v[k] = x.get<double>();
  return v;
}

std::string mode_name(LabelingMode m) { return m == LabelingMode::Oracle ? "oracle" : "human"; }

class IterationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class F>
auto in_stage(std::size_t iteration, const char* stage, F&& f) {
  try {
    return f();
  } catch (const IterationError&) {
    throw;
  } catch (const std::exception& e) {
    throw IterationError("iteration " + std::to_string(iteration) + ", " + stage + ": " + e.what());
  }
}

}  // namespace

double default_delta(const std::string& env) { return env.starts_with("goal") ? 0.75 : 0.9; }

void LoopConfig::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (n_rollouts < 1) throw ConfigError("n_rollouts must be at least 1");
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (seed_dataset.empty() && (n_seed_safe < 1 || n_seed_unsafe < 1)) {
    throw ConfigError("seed counts must be at least 1");
  }
  if (training_profile != "desk" && training_profile != "published") {
    throw ConfigError("training_profile must be 'desk' or 'published'");
  }
  if (!training.is_object()) throw ConfigError("training must be an object");
  if (output_dir.empty()) throw ConfigError("output_dir is required");
}

LoopConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be an object");
  static const std::vector<std::string> known = {
      "env",          "template",        "template_file",    "bounds",         "delta",
      "n_rollouts",   "n_seed_safe",     "n_seed_unsafe",    "seed_dataset",   "training_steps",
      "training_profile", "training",    "bo_budget",        "max_iterations", "labeling",
      "seed",         "output_dir",      "warm_start_policy", "warm_start_bo", "display",
      "poll_interval_ms", "version"};
  for (const auto& [k, _] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
  }
  LoopConfig c;
  try {
    c.env = j.value("env", c.env);
    c.template_text = j.value("template", std::string{});
    c.template_file = j.value("template_file", std::string{});
    if (j.contains("bounds")) {
      for (const auto& b : j.at("bounds")) {
        c.bounds.push_back({b.at("name").get<std::string>(), b.at("lo").get<double>(), b.at("hi").get<double>()});
      }
    }
    c.delta = j.value("delta", default_delta(c.env));
    c.n_rollouts = j.value("n_rollouts", c.n_rollouts);
    c.n_seed_safe = j.value("n_seed_safe", c.n_seed_safe);
    c.n_seed_unsafe = j.value("n_seed_unsafe", c.n_seed_unsafe);
    c.seed_dataset = j.value("seed_dataset", std::string{});
    c.training_steps = j.value("training_steps", c.training_steps);
    c.training_profile = j.value("training_profile", c.training_profile);
    c.training = j.value("training", json::object());
    c.bo_budget = j.value("bo_budget", c.bo_budget);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    const std::string mode = j.value("labeling", std::string{"oracle"});
    if (mode == "oracle") {
      c.labeling = LabelingMode::Oracle;
    } else if (mode == "human") {
      c.labeling = LabelingMode::Human;
    } else {
      throw ConfigError("labeling must be 'oracle' or 'human'");
    }
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.warm_start_policy = j.value("warm_start_policy", c.warm_start_policy);
    c.warm_start_bo = j.value("warm_start_bo", c.warm_start_bo);
    c.display = j.value("display", json::object());
    c.poll_interval_ms = j.value("poll_interval_ms", c.poll_interval_ms);
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

json to_json(const LoopConfig& c) {
  json bounds = json::array();
  for (const auto& b : c.bounds) bounds.push_back({{"name", b.name}, {"lo", b.lo}, {"hi", b.hi}});
  json j = {{"version", kStateVersion},
            {"env", c.env},
            {"bounds", bounds},
            {"delta", c.delta},
            {"n_rollouts", c.n_rollouts},
            {"n_seed_safe", c.n_seed_safe},
            {"n_seed_unsafe", c.n_seed_unsafe},
            {"training_steps", c.training_steps},
            {"training_profile", c.training_profile},
            {"training", c.training},
            {"bo_budget", c.bo_budget},
            {"max_iterations", c.max_iterations},
            {"labeling", mode_name(c.labeling)},
            {"seed", c.seed},
            {"output_dir", c.output_dir},
            {"warm_start_policy", c.warm_start_policy},
            {"warm_start_bo", c.warm_start_bo},
            {"display", c.display},
            {"poll_interval_ms", c.poll_interval_ms}};
  if (!c.template_text.empty()) j["template"] = c.template_text;
  if (!c.template_file.empty()) j["template_file"] = c.template_file;
  if (!c.seed_dataset.empty()) j["seed_dataset"] = c.seed_dataset;
  return j;
}

LoopConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  LoopConfig c;
  try {
    c = config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto rebase = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  rebase(c.template_file);
  rebase(c.seed_dataset);
  rebase(c.output_dir);
  return c;
}

Problem resolve_problem(const LoopConfig& cfg) {
  Problem p{envs::make_spec(cfg.env), {}, {}, {}};
  if (!cfg.template_text.empty()) {
    p.template_text = cfg.template_text;
  } else if (!cfg.template_file.empty()) {
    std::ifstream in(cfg.template_file, std::ios::binary);
    if (!in) throw ConfigError("template file not found: " + cfg.template_file);
    std::stringstream ss;
    ss << in.rdbuf();
    p.template_text = ss.str();
  } else {
    p.template_text = p.spec.template_text;
  }
  try {
    p.tmpl = stl::parse_formula(p.template_text, p.spec.state_dims);
  } catch (const stl::ParseError& e) {
    throw ConfigError(std::string("template: ") + e.what());
  }
  p.template_text = stl::to_string(p.tmpl);
  p.bounds = cfg.bounds.empty() ? p.spec.bounds : cfg.bounds;
  for (const auto& name : stl::free_parameters(p.tmpl)) {
    if (std::none_of(p.bounds.begin(), p.bounds.end(), [&](const auto& b) { return b.name == name; })) {
      throw ConfigError("no bounds for template parameter '" + name + "'");
    }
  }
  return p;
}

policy::Hyperparams resolve_training(const LoopConfig& cfg) {
  auto hp = cfg.training_profile == "published" ? policy::Hyperparams::published(cfg.env)
                                                : policy::Hyperparams::desk(cfg.env);
  if (cfg.training_steps > 0) hp.total_steps = cfg.training_steps;
  try {
    hp = policy::hyperparams_from_json(cfg.training, hp);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  hp.constrained = true;
  return hp;
}

bo::BoConfig resolve_bo(const LoopConfig& cfg, std::size_t dim) {
  bo::BoConfig b;
  b.budget = cfg.bo_budget > 0 ? cfg.bo_budget : std::max<std::size_t>(80, 25 * dim);
  b.budget = std::max(b.budget, bo::default_n_init(dim));
  return b;
}

std::vector<double> LoopState::alpha_history() const {
  std::vector<double> out;
  for (const auto& r : records) out.push_back(r.alpha);
  return out;
}

json to_json(const LoopState& s) {
  json records = json::array();
  for (const auto& r : s.records) {
    records.push_back({{"iteration", r.iteration},
                       {"valuation", valuation_json(r.valuation)},
                       {"mcr", r.mcr},
                       {"alpha", r.alpha},
                       {"checkpoint", r.checkpoint},
                       {"rollout_ids", r.rollout_ids},
                       {"n_safe", r.n_safe},
                       {"n_unsafe", r.n_unsafe},
                       {"dataset_safe", r.dataset_safe},
                       {"dataset_unsafe", r.dataset_unsafe}});
  }
  return {{"version", kStateVersion},
          {"iteration", s.iteration},
          {"initial_alpha", s.initial_alpha},
          {"converged", s.converged},
          {"dataset", {{"safe", s.safe}, {"unsafe", s.unsafe}}},
          {"records", records}};
}

LoopState state_from_json(const json& j) {
  if (j.at("version").get<int>() != kStateVersion) throw std::runtime_error("unsupported loop state version");
  LoopState s;
  s.iteration = j.at("iteration").get<std::size_t>();
  s.initial_alpha = j.at("initial_alpha").get<double>();
  s.converged = j.at("converged").get<bool>();
  s.safe = j.at("dataset").at("safe").get<std::vector<std::string>>();
  s.unsafe = j.at("dataset").at("unsafe").get<std::vector<std::string>>();
  for (const auto& r : j.at("records")) {
    IterationRecord rec;
    rec.iteration = r.at("iteration").get<std::size_t>();
    rec.valuation = valuation_from(r.at("valuation"));
    rec.mcr = r.at("mcr").get<double>();
    rec.alpha = r.at("alpha").get<double>();
    rec.checkpoint = r.at("checkpoint").get<std::string>();
    rec.rollout_ids = r.at("rollout_ids").get<std::vector<std::string>>();
    rec.n_safe = r.at("n_safe").get<std::size_t>();
    rec.n_unsafe = r.at("n_unsafe").get<std::size_t>();
    rec.dataset_safe = r.at("dataset_safe").get<std::size_t>();
    rec.dataset_unsafe = r.at("dataset_unsafe").get<std::size_t>();
    s.records.push_back(std::move(rec));
  }
  return s;
}

LoopState load_state(const fs::path& run_dir) { return state_from_json(read_json(run_dir / "state.json")); }

bo::LabeledDataset load_run_dataset(const fs::path& run_dir, const LoopState& state) {
  bo::LabeledDataset ds;
  for (const auto& p : state.safe) ds.safe.push_back(stl::load_trace(run_dir / p));
  for (const auto& p : state.unsafe) ds.unsafe.push_back(stl::load_trace(run_dir / p));
  return ds;
}

namespace {

class Runner {
 public:
  Runner(const LoopConfig& cfg, const RunHooks& hooks)
      : cfg_(cfg), hooks_(hooks), dir_(cfg.output_dir), problem_(resolve_problem(cfg)),
        hp_(resolve_training(cfg)), bo_cfg_(resolve_bo(cfg, problem_.bounds.size())), store_(dir_ / "labels") {}

  RunResult run() {
    prepare();
    while (!state_.converged && state_.iteration < cfg_.max_iterations) {
      iterate(state_.iteration + 1);
    }
    publish_status("done", state_.iteration);
    return result();
  }

 private:
  void log(const std::string& msg) const {
    if (hooks_.log) hooks_.log(msg);
  }

  json resolved_config() const {
    LoopConfig c = cfg_;
    c.template_text = problem_.template_text;
    c.template_file.clear();
    c.bounds = problem_.bounds;
    c.bo_budget = bo_cfg_.budget;
    c.training = policy::to_json(hp_);
    c.training_steps = hp_.total_steps;
    return to_json(c);
  }

  // Fields that may change between a run and its resume.
  static json comparable(json j) {
    for (const char* k : {"output_dir", "poll_interval_ms", "display", "seed_dataset"}) j.erase(k);
    return j;
  }

  void prepare() {
    fs::create_directories(dir_);
    const json resolved = resolved_config();
    const fs::path config_path = dir_ / "config.json";
    if (fs::exists(dir_ / "state.json")) {
      if (comparable(read_json(config_path)) != comparable(resolved)) {
        throw ConfigError("run directory " + dir_.string() + " holds a run with a different config");
      }
      state_ = load_state(dir_);
      dataset_ = load_run_dataset(dir_, state_);
      log("resuming after iteration " + std::to_string(state_.iteration));
      return;
    }
    write_json(config_path, resolved);
    dataset_ = cfg_.seed_dataset.empty()
                   ? seed_datasets(problem_.spec, cfg_.n_seed_safe, cfg_.n_seed_unsafe,
                                   derive_seed(cfg_.seed, kSeedStage, 0))
                   : load_dataset(cfg_.seed_dataset);
    dataset_.validate();
    save_dataset(dataset_, dir_ / "seed");
    for (const auto& tr : dataset_.safe) state_.safe.push_back("seed/safe/" + tr.id() + ".csv");
    for (const auto& tr : dataset_.unsafe) state_.unsafe.push_back("seed/unsafe/" + tr.id() + ".csv");
    state_.initial_alpha = compute_alpha(dataset_.safe.size(), dataset_.unsafe.size());
    write_json(dir_ / "state.json", to_json(state_));
    log("seeded " + std::to_string(dataset_.safe.size()) + " safe and " + std::to_string(dataset_.unsafe.size()) +
        " unsafe traces, initial alpha " + stl::format_real(state_.initial_alpha));
  }

  void publish_status(const std::string& stage, std::size_t iteration, std::optional<double> mcr = std::nullopt) {
    if (!mcr && !state_.records.empty()) mcr = state_.records.back().mcr;
    json status = {{"iteration", iteration},
                   {"stage", stage},
                   {"alpha_history", state_.alpha_history()},
                   {"current_mcr", mcr ? json(*mcr) : json(nullptr)},
                   {"converged", state_.converged},
                   {"delta", cfg_.delta},
                   {"labeling", mode_name(cfg_.labeling)}};
    store_.write_status(status);
  }

  void iterate(std::size_t k) {
    const fs::path it = dir_ / ("iter_" + std::to_string(k));
    fs::create_directories(it / "rollouts");
    IterationRecord rec;
    rec.iteration = k;

    publish_status("bo", k);
    in_stage(k, "constraint synthesis", [&] { synthesize(k, it, rec); });
    log("iteration " + std::to_string(k) + ": " + stl::to_string(stl::valuate(problem_.tmpl, rec.valuation)) +
        " (mcr " + stl::format_real(rec.mcr) + ")");

    publish_status("training", k, rec.mcr);
    const policy::PolicySet ps = in_stage(k, "training", [&] { return train(k, it, rec); });

    publish_status("rollouts", k, rec.mcr);
    std::vector<stl::Trace> rollouts = in_stage(k, "rollouts", [&] {
      return policy::rollout_set(problem_.spec, ps, cfg_.n_rollouts, derive_seed(cfg_.seed, kRolloutStage, k),
                                 "it" + std::to_string(k));
    });
    for (const auto& tr : rollouts) {
      stl::save_trace(it / "rollouts" / (tr.id() + ".csv"), tr);
      rec.rollout_ids.push_back(tr.id());
    }

    publish_status("labeling", k, rec.mcr);
    const std::map<std::string, int> labels = in_stage(k, "labeling", [&] { return label(k, it, rollouts); });

    for (auto& tr : rollouts) {
      const std::string rel = "iter_" + std::to_string(k) + "/rollouts/" + tr.id() + ".csv";
      if (labels.at(tr.id()) == 1) {
        ++rec.n_safe;
        state_.safe.push_back(rel);
        dataset_.safe.push_back(std::move(tr));
      } else {
        ++rec.n_unsafe;
        state_.unsafe.push_back(rel);
        dataset_.unsafe.push_back(std::move(tr));
      }
    }
    rec.alpha = compute_alpha(rec.n_safe, rec.n_unsafe);
    rec.dataset_safe = dataset_.safe.size();
    rec.dataset_unsafe = dataset_.unsafe.size();
    state_.records.push_back(rec);
    state_.iteration = k;
    state_.converged = rec.alpha >= cfg_.delta;
    write_json(dir_ / "state.json", to_json(state_));
    log("iteration " + std::to_string(k) + ": alpha " + stl::format_real(rec.alpha) + " (" +
        std::to_string(rec.n_safe) + "/" + std::to_string(rec.n_safe + rec.n_unsafe) + " safe)");
  }

  void synthesize(std::size_t k, const fs::path& it, IterationRecord& rec) {
    const fs::path vpath = it / "valuation.json";
    if (fs::exists(vpath)) {
      const json j = read_json(vpath);
      rec.valuation = valuation_from(j.at("valuation"));
      rec.mcr = j.at("mcr").get<double>();
      return;
    }
    const stl::Valuation* warm = nullptr;
    if (cfg_.warm_start_bo && !state_.records.empty()) warm = &state_.records.back().valuation;
    const auto res = bo::optimize(problem_.tmpl, problem_.bounds, dataset_, bo_cfg_,
                                  derive_seed(cfg_.seed, kBoStage, k), warm);
    bo::write_history_csv(res, problem_.bounds, it / "bo_history.csv");
    rec.valuation = res.best;
    rec.mcr = res.best_value;
    write_json(vpath, {{"version", kStateVersion},
                       {"valuation", valuation_json(res.best)},
                       {"mcr", res.best_value},
                       {"formula", stl::to_string(stl::valuate(problem_.tmpl, res.best))},
                       {"evaluations", res.evaluations()}});
  }

  policy::PolicySet train(std::size_t k, const fs::path& it, IterationRecord& rec) {
    rec.checkpoint = "iter_" + std::to_string(k) + "/policy_checkpoint.json";
    const fs::path cpath = dir_ / rec.checkpoint;
    if (fs::exists(cpath)) return policy::load_checkpoint(cpath);
    const stl::Formula cost = stl::valuate(problem_.tmpl, rec.valuation);
    std::optional<policy::PolicySet> previous;
    policy::TrainOptions opts;
    if (cfg_.warm_start_policy && !state_.records.empty()) {
      previous = policy::load_checkpoint(dir_ / state_.records.back().checkpoint);
      opts.warm_start = &*previous;
    }
    auto [ps, report] = policy::train(problem_.spec, cost, hp_, derive_seed(cfg_.seed, kTrainStage, k), opts);
    policy::write_metrics_csv(report, it / "metrics.csv");
    policy::save_checkpoint(ps, cpath);
    return std::move(ps);
  }

  std::map<std::string, int> label(std::size_t k, const fs::path& it, const std::vector<stl::Trace>& rollouts) {
    const fs::path lpath = it / "labels.json";
    std::map<std::string, int> labels;
    if (fs::exists(lpath)) {
      for (const auto& [id, v] : read_json(lpath).at("labels").items()) labels[id] = v.get<int>();
    } else if (cfg_.labeling == LabelingMode::Oracle) {
      for (const auto& tr : rollouts) labels[tr.id()] = oracle_label(problem_.spec, tr);
    } else {
      for (const auto& tr : rollouts) store_.enqueue(tr, k, cfg_.display);
      log("iteration " + std::to_string(k) + ": waiting for " + std::to_string(rollouts.size()) + " labels");
      while (true) {
        const auto stored = store_.labels();
        labels.clear();
        for (const auto& tr : rollouts) {
          if (auto f = stored.find(tr.id()); f != stored.end()) labels[tr.id()] = f->second.label;
        }
        if (labels.size() == rollouts.size()) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.poll_interval_ms));
      }
    }
    for (const auto& tr : rollouts) {
      if (!labels.count(tr.id())) throw std::runtime_error("labels file lacks '" + tr.id() + "'");
    }
    json lj = json::object();
    for (const auto& [id, v] : labels) lj[id] = v;
    if (!fs::exists(lpath)) write_json(lpath, {{"version", kStateVersion}, {"labels", lj}});
    return labels;
  }

  RunResult result() const {
    if (state_.records.empty()) throw std::runtime_error("run finished without iterations");
    std::size_t pick = state_.records.size() - 1;
    if (!state_.converged) {
      for (std::size_t i = 0; i < state_.records.size(); ++i) {
        if (state_.records[i].alpha >= state_.records[pick].alpha) pick = i;
      }
    }
    const auto& r = state_.records[pick];
    return {r.valuation, fs::absolute(dir_ / r.checkpoint), state_, r.iteration};
  }

  const LoopConfig& cfg_;
  const RunHooks& hooks_;
  fs::path dir_;
  Problem problem_;
  policy::Hyperparams hp_;
  bo::BoConfig bo_cfg_;
  labels::LabelStore store_;
  LoopState state_;
  bo::LabeledDataset dataset_;
};

}  // namespace

RunResult run(const LoopConfig& cfg, const RunHooks& hooks) {
  cfg.validate();
  Runner runner(cfg, hooks);
  return runner.run();
}

}  // namespace stlrl::loop
