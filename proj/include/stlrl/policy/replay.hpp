#pragma once

#include <random>
#include <span>

#include "stlrl/policy/mlp.hpp"

namespace stlrl::policy {

struct Batch {
  Matrix obs;       // obs_dim x B
  Matrix action;    // act_dim x B
  Vector reward;
  Vector cost;
  Matrix next_obs;
  Vector done;      // 1 for terminal transitions
};

/// Ring buffer of transitions with uniform minibatch sampling.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(std::size_t obs_dim, std::size_t act_dim, std::size_t capacity);

  void add(std::span<const double> obs, std::span<const double> action, double reward, double cost,
           std::span<const double> next_obs, bool done);

  /// batch_size indices drawn uniformly with replacement from [0, size()).
  Batch sample(std::size_t batch_size, std::mt19937_64& rng) const;
  Batch gather(std::span<const std::size_t> indices) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t obs_dim_ = 0, act_dim_ = 0, capacity_ = 0;
  std::size_t size_ = 0, next_ = 0;
  Matrix obs_, action_, next_obs_;
  Vector reward_, cost_, done_;
};

}  // namespace stlrl::policy
