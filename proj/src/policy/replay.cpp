#include "stlrl/policy/replay.hpp"

#include <stdexcept>

namespace stlrl::policy {

ReplayBuffer::ReplayBuffer(std::size_t obs_dim, std::size_t act_dim, std::size_t capacity)
    : obs_dim_(obs_dim), act_dim_(act_dim), capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  const auto cap = static_cast<Eigen::Index>(capacity);
  obs_.resize(static_cast<Eigen::Index>(obs_dim), cap);
  next_obs_.resize(static_cast<Eigen::Index>(obs_dim), cap);
  action_.resize(static_cast<Eigen::Index>(act_dim), cap);
  reward_.resize(cap);
  cost_.resize(cap);
  done_.resize(cap);
}

void ReplayBuffer::add(std::span<const double> obs, std::span<const double> action, double reward, double cost,
                       std::span<const double> next_obs, bool done) {
  if (obs.size() != obs_dim_ || next_obs.size() != obs_dim_ || action.size() != act_dim_) {
    throw std::invalid_argument("transition does not match the buffer shape");
  }
  const auto j = static_cast<Eigen::Index>(next_);
  for (std::size_t i = 0; i < obs_dim_; ++i) {
    obs_(static_cast<Eigen::Index>(i), j) = obs[i];
    next_obs_(static_cast<Eigen::Index>(i), j) = next_obs[i];
  }
  for (std::size_t i = 0; i < act_dim_; ++i) action_(static_cast<Eigen::Index>(i), j) = action[i];
  reward_[j] = reward;
  cost_[j] = cost;
  done_[j] = done ? 1.0 : 0.0;
  next_ = (next_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
}

Batch ReplayBuffer::gather(std::span<const std::size_t> indices) const {
  const auto n = static_cast<Eigen::Index>(indices.size());
  Batch b;
  b.obs.resize(obs_.rows(), n);
  b.next_obs.resize(obs_.rows(), n);
  b.action.resize(action_.rows(), n);
  b.reward.resize(n);
  b.cost.resize(n);
  b.done.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto j = static_cast<Eigen::Index>(indices[k]);
    if (indices[k] >= size_) throw std::out_of_range("replay index beyond stored transitions");
    b.obs.col(k) = obs_.col(j);
    b.next_obs.col(k) = next_obs_.col(j);
    b.action.col(k) = action_.col(j);
    b.reward[k] = reward_[j];
    b.cost[k] = cost_[j];
    b.done[k] = done_[j];
  }
  return b;
}

Batch ReplayBuffer::sample(std::size_t batch_size, std::mt19937_64& rng) const {
  if (size_ == 0) throw std::logic_error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = pick(rng);
  return gather(idx);
}

}  // namespace stlrl::policy
