#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "stlrl/envs/environment.hpp"
#include "stlrl/stl/formula.hpp"
#include "stlrl/stl/trace.hpp"

namespace stlrl::bo {

struct LabeledDataset {
  std::vector<stl::Trace> safe;
  std::vector<stl::Trace> unsafe;

  std::size_t size() const { return safe.size() + unsafe.size(); }
  /// Throws std::invalid_argument if a side is empty or ids repeat.
  void validate() const;
};

struct Confusion {
  std::size_t safe_correct = 0, safe_wrong = 0;
  std::size_t unsafe_correct = 0, unsafe_wrong = 0;
  /// Mean of the two per-class error rates.
  double mcr() const;
};

/// Safe traces count as wrong when rho < 0, unsafe ones when rho >= 0.
Confusion classify(const stl::Formula& ground, const LabeledDataset& ds);

/// Balanced misclassification rate of the template under v.
double mcr_objective(const stl::Formula& tmpl, const stl::Valuation& v, const LabeledDataset& ds);

/// k(a, b) = variance * exp(-sum_i ((a_i - b_i) / l_i)^2).
double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& length_scale,
              double variance = 1.0);

struct GpState {
  Eigen::MatrixXd x;  // one point per row, unit box
  Eigen::VectorXd y;
  Eigen::VectorXd length_scale;
  double signal_variance = 1.0;
  double noise = 0.0;        // requested sigma_n^2
  double jitter_added = 0.0; // extra diagonal needed for the factorization
  Eigen::MatrixXd chol;      // lower factor of K + (noise + jitter_added) I
  Eigen::VectorXd alpha;     // (K + ...)^-1 y
};

inline constexpr double kMaxJitter = 1e-6;

/// Zero prior mean. Adds escalating jitter (up to kMaxJitter) when the
/// factorization fails; throws std::runtime_error beyond that and
/// std::invalid_argument on non-finite input.
GpState gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& length_scale, double noise,
               double signal_variance = 1.0);

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

Prediction gp_predict(const GpState& gp, const Eigen::VectorXd& p);

/// Minimization form. sigma = 0 gives max(0, f_min - mu).
double expected_improvement(double mu, double sigma, double f_min);
double expected_improvement(const GpState& gp, const Eigen::VectorXd& p, double f_min);

struct BoConfig {
  std::size_t budget = 80;
  std::size_t n_init = 0;  // 0: max(8, 4 * dim)
  double length_scale = 0.2;
  double noise = 1e-6;
  std::size_t candidates = 512;
  std::size_t refine_starts = 4;
  std::size_t refine_passes = 16;
  bool standardize = true;  // fit the GP on (y - mean) / sd
};

std::size_t default_n_init(std::size_t dim);

struct Evaluation {
  std::size_t iteration = 0;
  std::vector<double> point;  // in parameter units, ordered as bounds
  double value = 0.0;
};

struct BoResult {
  stl::Valuation best;
  double best_value = 1.0;
  std::vector<Evaluation> history;
  std::size_t evaluations() const { return history.size(); }
};

/// Latin-hypercube initial design, then GP + EI proposals until the budget
/// is spent or a zero-MCR valuation is found. warm_start, when given, takes
/// the last slot of the initial design.
BoResult optimize(const stl::Formula& tmpl, const std::vector<envs::ParamBound>& bounds, const LabeledDataset& ds,
                  const BoConfig& cfg, std::uint64_t seed, const stl::Valuation* warm_start = nullptr);

/// CSV: iteration,<param names>,mcr.
void write_history_csv(const BoResult& r, const std::vector<envs::ParamBound>& bounds,
                       const std::filesystem::path& path);

}  // namespace stlrl::bo
