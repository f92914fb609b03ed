#include "stlrl/policy/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace stlrl::policy {

using nlohmann::json;

namespace {

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json params_json(const Params& p) {
  json layers = json::array();
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    layers.push_back({{"rows", p.w[l].rows()},
                      {"cols", p.w[l].cols()},
                      {"w", std::vector<double>(p.w[l].data(), p.w[l].data() + p.w[l].size())},
                      {"b", vec_json(p.b[l])}});
  }
  return layers;
}

void params_from(const json& j, Params& p) {
  if (j.size() != p.w.size()) throw std::runtime_error("checkpoint layer count mismatch");
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    const auto& layer = j.at(l);
    if (layer.at("rows").get<Eigen::Index>() != p.w[l].rows() || layer.at("cols").get<Eigen::Index>() != p.w[l].cols()) {
      throw std::runtime_error("checkpoint layer shape mismatch");
    }
    const auto w = layer.at("w").get<std::vector<double>>();
    const auto b = layer.at("b").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(p.w[l].size()) || b.size() != static_cast<std::size_t>(p.b[l].size())) {
      throw std::runtime_error("checkpoint layer size mismatch");
    }
    std::copy(w.begin(), w.end(), p.w[l].data());
    std::copy(b.begin(), b.end(), p.b[l].data());
  }
}

json mlp_json(const Mlp& m) {
  return {{"sizes", m.sizes()},
          {"output", m.output_kind() == OutputKind::TanhScaled ? "tanh" : "identity"},
          {"out_mid", vec_json(m.out_mid())},
          {"out_half", vec_json(m.out_half())},
          {"layers", params_json(m.params())}};
}

Mlp mlp_from(const json& j) {
  const auto sizes = j.at("sizes").get<std::vector<std::size_t>>();
  const auto kind = j.at("output").get<std::string>();
  Mlp m;
  if (kind == "tanh") {
    const auto mid = j.at("out_mid").get<std::vector<double>>();
    const auto half = j.at("out_half").get<std::vector<double>>();
    std::vector<double> lo(sizes.back(), -1.0), hi(sizes.back(), 1.0);
    m = Mlp(sizes, OutputKind::TanhScaled, lo, hi);
    m.set_output_scale(Eigen::Map<const Vector>(mid.data(), static_cast<Eigen::Index>(mid.size())),
                       Eigen::Map<const Vector>(half.data(), static_cast<Eigen::Index>(half.size())));
  } else if (kind == "identity") {
    m = Mlp(sizes, OutputKind::Identity);
  } else {
    throw std::runtime_error("checkpoint: unknown output kind '" + kind + "'");
  }
  params_from(j.at("layers"), m.params());
  return m;
}

json adam_json(const Adam& a) {
  return {{"lr", a.config.lr},   {"beta1", a.config.beta1}, {"beta2", a.config.beta2},
          {"eps", a.config.eps}, {"t", a.t},                {"m", params_json(a.m)},
          {"v", params_json(a.v)}};
}

Adam adam_from(const json& j, const Params& shape) {
  Adam a(shape, {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                 j.at("eps").get<double>()});
  a.t = j.at("t").get<long long>();
  params_from(j.at("m"), a.m);
  params_from(j.at("v"), a.v);
  return a;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

json to_json(const Hyperparams& hp) {
  return {{"actor_lr", hp.actor_lr},
          {"critic_lr", hp.critic_lr},
          {"gamma", hp.gamma},
          {"cost_gamma", hp.cost_gamma},
          {"batch_size", hp.batch_size},
          {"policy_delay", hp.policy_delay},
          {"exploration_noise", hp.exploration_noise},
          {"policy_noise", hp.policy_noise},
          {"noise_clip", hp.noise_clip},
          {"tau", hp.tau},
          {"cost_limit", hp.cost_limit},
          {"lambda_lr", hp.lambda_lr},
          {"lambda_init", hp.lambda_init},
          {"hidden", hp.hidden},
          {"total_steps", hp.total_steps},
          {"steps_per_epoch", hp.steps_per_epoch},
          {"warmup_steps", hp.warmup_steps},
          {"buffer_capacity", hp.buffer_capacity},
          {"eval_episodes", hp.eval_episodes},
          {"constrained", hp.constrained}};
}

Hyperparams hyperparams_from_json(const json& j, Hyperparams hp) {
  maybe(j, "actor_lr", hp.actor_lr);
  maybe(j, "critic_lr", hp.critic_lr);
  maybe(j, "gamma", hp.gamma);
  maybe(j, "cost_gamma", hp.cost_gamma);
  maybe(j, "batch_size", hp.batch_size);
  maybe(j, "policy_delay", hp.policy_delay);
  maybe(j, "exploration_noise", hp.exploration_noise);
  maybe(j, "policy_noise", hp.policy_noise);
  maybe(j, "noise_clip", hp.noise_clip);
  maybe(j, "tau", hp.tau);
  maybe(j, "cost_limit", hp.cost_limit);
  maybe(j, "lambda_lr", hp.lambda_lr);
  maybe(j, "lambda_init", hp.lambda_init);
  maybe(j, "hidden", hp.hidden);
  maybe(j, "total_steps", hp.total_steps);
  maybe(j, "steps_per_epoch", hp.steps_per_epoch);
  maybe(j, "warmup_steps", hp.warmup_steps);
  maybe(j, "buffer_capacity", hp.buffer_capacity);
  maybe(j, "eval_episodes", hp.eval_episodes);
  maybe(j, "constrained", hp.constrained);
  return hp;
}

json to_json(const PolicySet& ps) {
  return {{"version", kCheckpointVersion},
          {"hyperparams", to_json(ps.hp)},
          {"lambda", ps.lambda},
          {"env_steps", ps.env_steps},
          {"critic_updates", ps.critic_updates},
          {"actor", mlp_json(ps.actor)},
          {"critic1", mlp_json(ps.critic1)},
          {"critic2", mlp_json(ps.critic2)},
          {"cost_critic", mlp_json(ps.cost_critic)},
          {"actor_target", mlp_json(ps.actor_target)},
          {"critic1_target", mlp_json(ps.critic1_target)},
          {"critic2_target", mlp_json(ps.critic2_target)},
          {"cost_critic_target", mlp_json(ps.cost_critic_target)},
          {"actor_opt", adam_json(ps.actor_opt)},
          {"critic1_opt", adam_json(ps.critic1_opt)},
          {"critic2_opt", adam_json(ps.critic2_opt)},
          {"cost_opt", adam_json(ps.cost_opt)}};
}

PolicySet policy_from_json(const json& j) {
  if (j.at("version").get<int>() != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  PolicySet ps;
  ps.hp = hyperparams_from_json(j.at("hyperparams"));
  ps.lambda = j.at("lambda").get<double>();
  ps.env_steps = j.at("env_steps").get<std::uint64_t>();
  ps.critic_updates = j.at("critic_updates").get<std::uint64_t>();
  ps.actor = mlp_from(j.at("actor"));
  ps.critic1 = mlp_from(j.at("critic1"));
  ps.critic2 = mlp_from(j.at("critic2"));
  ps.cost_critic = mlp_from(j.at("cost_critic"));
  ps.actor_target = mlp_from(j.at("actor_target"));
  ps.critic1_target = mlp_from(j.at("critic1_target"));
  ps.critic2_target = mlp_from(j.at("critic2_target"));
  ps.cost_critic_target = mlp_from(j.at("cost_critic_target"));
  ps.actor_opt = adam_from(j.at("actor_opt"), ps.actor.params());
  ps.critic1_opt = adam_from(j.at("critic1_opt"), ps.critic1.params());
  ps.critic2_opt = adam_from(j.at("critic2_opt"), ps.critic2.params());
  ps.cost_opt = adam_from(j.at("cost_opt"), ps.cost_critic.params());
  return ps;
}

void save_checkpoint(const PolicySet& ps, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(ps).dump() << '\n';
}

PolicySet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return policy_from_json(json::parse(in));
}

}  // namespace stlrl::policy
