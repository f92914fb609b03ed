#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "stlrl/loop/loop.hpp"
#include "stlrl/stl/robustness.hpp"

namespace stlrl::loop {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kAttemptsPerTrace = 200;
constexpr std::size_t kPoolFactor = 4;
constexpr std::size_t kSegmentSteps = 100;

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

struct Scripted {
  stl::Trace trace;
  double reach = 0.0;   // furthest the controller was told to go in any direction
  double spread = 0.0;  // ... in its least extended direction
};

// Scripted driver: PD tracking of a waypoint in the planar envs, a target
// speed in the velocity env.
Scripted scripted_episode(const envs::EnvSpec& spec, std::uint64_t env_seed, std::mt19937_64& rng) {
  stl::Trace tr(spec.state_dims, spec.dt);
  double reach = 0.0, spread = 0.0;
  envs::EnvState s = envs::reset(spec, env_seed);
  std::vector<double> action(spec.action_dim());

  switch (spec.kind) {
    case envs::EnvKind::Velocity: {
      const double target = uniform(rng, 0.5, 5.0);
      const double gain = uniform(rng, 2.0, 6.0);
      reach = spread = target;
      for (std::size_t t = 0; t < spec.horizon; ++t) {
        action[0] = gain * (target - s.values[1]);
        auto r = envs::step(spec, s, action);
        tr.push_back(r.state.values);
        s = std::move(r.state);
        if (r.done) break;
      }
      break;
    }
    case envs::EnvKind::Circle:
    case envs::EnvKind::Goal: {
      // Position and velocity slots.
      const bool goal = spec.kind == envs::EnvKind::Goal;
      const std::size_t ix = 0, iy = 1, iu = goal ? 4 : 2, iv = goal ? 5 : 3;
      const double cx = s.values[ix], cy = s.values[iy];
      const double reach_left = uniform(rng, 0.2, 2.2), reach_right = uniform(rng, 0.2, 2.2);
      const double reach_y = uniform(rng, 0.2, 2.2);
      reach = goal ? reach_y : std::max(reach_left, reach_right);
      spread = goal ? reach_y : std::min(reach_left, reach_right);
      double wx = cx, wy = cy;
      for (std::size_t t = 0; t < spec.horizon; ++t) {
        if (t % kSegmentSteps == 0) {
          if (goal) {
            // Wander within a disk around the spawn point.
            const double r = reach_y * std::sqrt(uniform(rng, 0.0, 1.0));
            const double a = uniform(rng, 0.0, 2.0 * M_PI);
            wx = cx + r * std::cos(a);
            wy = cy + r * std::sin(a);
          } else {
            wx = uniform(rng, -reach_left, reach_right);
            wy = uniform(rng, -reach_y, reach_y);
          }
        }
        action[0] = 4.0 * (wx - s.values[ix]) - 3.0 * s.values[iu];
        action[1] = 4.0 * (wy - s.values[iy]) - 3.0 * s.values[iv];
        for (std::size_t i = 0; i < action.size(); ++i) {
          action[i] = std::clamp(action[i], spec.action_low[i], spec.action_high[i]);
        }
        auto r = envs::step(spec, s, action);
        tr.push_back(r.state.values);
        s = std::move(r.state);
        if (r.done) break;
      }
      break;
    }
  }
  return {std::move(tr), reach, spread};
}

}  // namespace

int oracle_label(const envs::EnvSpec& spec, const stl::Trace& tr) {
  return stl::satisfies(envs::true_constraint(spec), tr) ? 1 : 0;
}

double compute_alpha(std::size_t n_safe, std::size_t n_unsafe) {
  if (n_safe + n_unsafe == 0) throw std::invalid_argument("alpha needs at least one labeled trace");
  return static_cast<double>(n_safe) / static_cast<double>(n_safe + n_unsafe);
}

namespace {

// Oracle-sorted draws until each side holds `per_label * n`; ids assigned by
// the caller.
void draw_pool(const envs::EnvSpec& spec, std::size_t n_safe, std::size_t n_unsafe, std::size_t per_label,
               std::uint64_t seed, std::vector<Scripted>& safe, std::vector<Scripted>& unsafe) {
  if (n_safe == 0 || n_unsafe == 0) throw std::invalid_argument("seed dataset needs at least one trace per label");
  std::mt19937_64 rng(seed);
  const std::size_t want_safe = per_label * n_safe, want_unsafe = per_label * n_unsafe;
  const std::size_t budget = kAttemptsPerTrace * (n_safe + n_unsafe);
  for (std::size_t attempt = 0; attempt < budget; ++attempt) {
    if (safe.size() >= want_safe && unsafe.size() >= want_unsafe) break;
    const std::uint64_t env_seed = rng();
    Scripted s = scripted_episode(spec, env_seed, rng);
    const bool ok = oracle_label(spec, s.trace) == 1;
    auto& side = ok ? safe : unsafe;
    if (side.size() < (ok ? want_safe : want_unsafe)) side.push_back(std::move(s));
  }
  if (safe.size() < n_safe || unsafe.size() < n_unsafe) {
    throw std::runtime_error("seed generator for '" + spec.name + "' produced " + std::to_string(safe.size()) +
                             " safe and " + std::to_string(unsafe.size()) + " unsafe traces within " +
                             std::to_string(budget) + " attempts");
  }
}

bo::LabeledDataset take(std::vector<Scripted>& safe, std::vector<Scripted>& unsafe, std::size_t n_safe,
                        std::size_t n_unsafe) {
  bo::LabeledDataset ds;
  for (std::size_t i = 0; i < n_safe; ++i) {
    safe[i].trace.set_id("seed-safe-" + std::to_string(i));
    ds.safe.push_back(std::move(safe[i].trace));
  }
  for (std::size_t i = 0; i < n_unsafe; ++i) {
    unsafe[i].trace.set_id("seed-unsafe-" + std::to_string(i));
    ds.unsafe.push_back(std::move(unsafe[i].trace));
  }
  return ds;
}

}  // namespace

bo::LabeledDataset sample_dataset(const envs::EnvSpec& spec, std::size_t n_safe, std::size_t n_unsafe,
                                  std::uint64_t seed) {
  std::vector<Scripted> safe, unsafe;
  draw_pool(spec, n_safe, n_unsafe, 1, seed, safe, unsafe);
  return take(safe, unsafe, n_safe, n_unsafe);
}

bo::LabeledDataset seed_datasets(const envs::EnvSpec& spec, std::size_t n_safe, std::size_t n_unsafe,
                                 std::uint64_t seed) {
  // Keep what an expert would pick: safe traces that went far in every
  // direction, unsafe ones that overstepped the least.
  std::vector<Scripted> safe, unsafe;
  draw_pool(spec, n_safe, n_unsafe, kPoolFactor, seed, safe, unsafe);
  std::stable_sort(safe.begin(), safe.end(), [](const auto& a, const auto& b) { return a.spread > b.spread; });
  std::stable_sort(unsafe.begin(), unsafe.end(), [](const auto& a, const auto& b) { return a.reach < b.reach; });
  return take(safe, unsafe, n_safe, n_unsafe);
}

namespace {

std::vector<stl::Trace> load_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<stl::Trace> out;
  for (const auto& f : files) out.push_back(stl::load_trace(f));
  return out;
}

}  // namespace

bo::LabeledDataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  bo::LabeledDataset ds{load_dir(dir / "safe"), load_dir(dir / "unsafe")};
  ds.validate();
  return ds;
}

void save_dataset(const bo::LabeledDataset& ds, const fs::path& dir) {
  for (const auto& [sub, traces] : {std::pair{"safe", &ds.safe}, std::pair{"unsafe", &ds.unsafe}}) {
    fs::create_directories(dir / sub);
    for (const auto& tr : *traces) stl::save_trace(dir / sub / (tr.id() + ".csv"), tr);
  }
}

}  // namespace stlrl::loop
