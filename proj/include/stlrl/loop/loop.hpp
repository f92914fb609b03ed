#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stlrl/bo/bo.hpp"
#include "stlrl/envs/environment.hpp"
#include "stlrl/policy/td3.hpp"

namespace stlrl::loop {

inline constexpr int kStateVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LabelingMode { Oracle, Human };

struct LoopConfig {
  std::string env = "circle";
  /// Template text; empty means template_file, then the env default.
  std::string template_text;
  std::string template_file;
  std::vector<envs::ParamBound> bounds;  // empty: env default
  double delta = 0.9;
  std::size_t n_rollouts = 50;
  std::size_t n_seed_safe = 10;
  std::size_t n_seed_unsafe = 10;
  /// Directory with safe/ and unsafe/ trace files; empty: scripted seeding.
  std::string seed_dataset;
  std::size_t training_steps = 0;  // n_s; 0: profile default
  std::string training_profile = "desk";
  nlohmann::json training = nlohmann::json::object();  // Hyperparams overrides
  std::size_t bo_budget = 0;  // 0: max(80, 25 * dim)
  std::size_t max_iterations = 30;
  LabelingMode labeling = LabelingMode::Oracle;
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  bool warm_start_policy = false;
  bool warm_start_bo = true;
  /// Geometry hints shown to the human labeler, copied verbatim.
  nlohmann::json display = nlohmann::json::object();
  std::size_t poll_interval_ms = 1000;

  /// Throws ConfigError when an invariant fails.
  void validate() const;
};

/// Default delta per environment: 0.75 for goal variants, else 0.9.
double default_delta(const std::string& env);

LoopConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LoopConfig& cfg);
/// Relative template_file, seed_dataset and output_dir are resolved against
/// the config file's directory.
LoopConfig load_config(const std::filesystem::path& path);

/// Environment, template text and bounds a config resolves to.
struct Problem {
  envs::EnvSpec spec;
  std::string template_text;
  stl::Formula tmpl;
  std::vector<envs::ParamBound> bounds;
};
Problem resolve_problem(const LoopConfig& cfg);
policy::Hyperparams resolve_training(const LoopConfig& cfg);
bo::BoConfig resolve_bo(const LoopConfig& cfg, std::size_t dim);

/// 1 iff the trace strictly satisfies the hidden constraint.
int oracle_label(const envs::EnvSpec& spec, const stl::Trace& tr);

/// Fraction of safe labels; throws std::invalid_argument when both are 0.
double compute_alpha(std::size_t n_safe, std::size_t n_unsafe);

/// Scripted trajectories with a random reach, sorted by the oracle until the
/// requested counts are met: the first n_safe safe and n_unsafe unsafe draws.
/// Throws std::runtime_error when the retry budget runs out and
/// std::invalid_argument on zero counts.
bo::LabeledDataset sample_dataset(const envs::EnvSpec& spec, std::size_t n_safe, std::size_t n_unsafe,
                                  std::uint64_t seed);

/// Like sample_dataset, but draws a pool four times larger and keeps the safe
/// traces with the largest reach and the unsafe ones with the smallest, i.e.
/// the examples closest to the boundary.
bo::LabeledDataset seed_datasets(const envs::EnvSpec& spec, std::size_t n_safe, std::size_t n_unsafe,
                                 std::uint64_t seed);

/// safe/ and unsafe/ subdirectories of trace files, sorted by file name.
bo::LabeledDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const bo::LabeledDataset& ds, const std::filesystem::path& dir);

struct IterationRecord {
  std::size_t iteration = 0;  // 1-based
  stl::Valuation valuation;
  double mcr = 1.0;  // BO objective on the dataset the valuation was fit to
  double alpha = 0.0;
  std::string checkpoint;  // relative to the run directory
  std::vector<std::string> rollout_ids;
  std::size_t n_safe = 0, n_unsafe = 0;
  std::size_t dataset_safe = 0, dataset_unsafe = 0;  // after appending
};

struct LoopState {
  std::size_t iteration = 0;  // completed iterations
  double initial_alpha = 0.0;
  /// Trace paths relative to the run directory.
  std::vector<std::string> safe;
  std::vector<std::string> unsafe;
  std::vector<IterationRecord> records;
  bool converged = false;

  std::vector<double> alpha_history() const;
};

nlohmann::json to_json(const LoopState& s);
LoopState state_from_json(const nlohmann::json& j);

struct RunResult {
  stl::Valuation valuation;
  std::filesystem::path checkpoint;  // absolute
  LoopState state;
  /// Iteration the valuation and checkpoint come from (1-based).
  std::size_t chosen_iteration = 0;
};

struct RunHooks {
  /// Progress messages.
  std::function<void(const std::string&)> log;
};

/// Alternates BO synthesis, training, rollouts and labeling until the
/// fraction of safe rollouts reaches delta or max_iterations pass. Always
/// completes at least one iteration. An existing run directory with the
/// same config is resumed from its last persisted stage. Without
/// convergence the iteration with the highest alpha is returned and
/// state.converged is false.
RunResult run(const LoopConfig& cfg, const RunHooks& hooks = {});

/// Cumulative labeled dataset of a run directory.
bo::LabeledDataset load_run_dataset(const std::filesystem::path& run_dir, const LoopState& state);
LoopState load_state(const std::filesystem::path& run_dir);

}  // namespace stlrl::loop
