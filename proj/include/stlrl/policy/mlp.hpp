#pragma once

#include <Eigen/Dense>
#include <random>
#include <span>
#include <vector>

namespace stlrl::policy {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Weights and biases of every layer, also used as the gradient container.
struct Params {
  std::vector<Matrix> w;  // w[l] is out x in
  std::vector<Vector> b;

  std::size_t size() const;
  void set_zero();
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  bool all_finite() const;
  bool operator==(const Params& o) const;
};

enum class OutputKind { Identity, TanhScaled };

/// Fully connected network, ReLU on hidden layers. Batches are columns.
class Mlp {
 public:
  Mlp() = default;
  /// Layer sizes including input and output. For TanhScaled outputs,
  /// low/high give the per-output range.
  Mlp(std::vector<std::size_t> sizes, OutputKind output, std::vector<double> low = {}, std::vector<double> high = {});

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init(std::mt19937_64& rng);

  /// Activations kept for backward. a[0] is the input, z[l] the
  /// pre-activation of layer l.
  struct Cache {
    std::vector<Matrix> a;
    std::vector<Matrix> z;
  };

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Cache& cache) const;

  /// Backpropagates dL/d(output). Accumulates into grad when given
  /// (grad must be shaped like params()) and returns dL/d(input).
  Matrix backward(const Cache& cache, const Matrix& dout, Params* grad) const;

  const Params& params() const { return p_; }
  Params& params() { return p_; }
  Params zeros_like() const;

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  OutputKind output_kind() const { return output_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  const Vector& out_mid() const { return mid_; }
  const Vector& out_half() const { return half_; }
  /// Overrides the tanh output affine map (used when restoring checkpoints).
  void set_output_scale(Vector mid, Vector half);

  bool operator==(const Mlp& o) const { return sizes_ == o.sizes_ && output_ == o.output_ && p_ == o.p_; }

 private:
  std::vector<std::size_t> sizes_;
  OutputKind output_ = OutputKind::Identity;
  Vector mid_, half_;
  Params p_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for one Params tree.
class Adam {
 public:
  Adam() = default;
  Adam(const Params& shape, AdamConfig cfg);

  void step(Params& p, const Params& grad);

  AdamConfig config;
  Params m, v;
  long long t = 0;
};

/// target <- (1 - tau) * target + tau * online, elementwise.
void soft_update(Params& target, const Params& online, double tau);

}  // namespace stlrl::policy
