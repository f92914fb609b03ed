#pragma once

#include <filesystem>

#include "json.hpp"
#include "stlrl/policy/td3.hpp"

namespace stlrl::policy {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const Hyperparams& hp);
/// Missing keys keep the values already in base.
Hyperparams hyperparams_from_json(const nlohmann::json& j, Hyperparams base = {});

/// Structured dump of all weights, optimizer moments, lambda and counters.
nlohmann::json to_json(const PolicySet& ps);
PolicySet policy_from_json(const nlohmann::json& j);

void save_checkpoint(const PolicySet& ps, const std::filesystem::path& path);
PolicySet load_checkpoint(const std::filesystem::path& path);

}  // namespace stlrl::policy
