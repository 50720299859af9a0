#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "umbra/agent.hpp"

namespace umbra {

/// Config file handling. The JSON file is the hyperparameter ledger: every
/// key has a default, unknown keys are rejected by name, and the effective
/// config can be frozen back out so that the frozen copy alone reproduces a
/// run.
namespace cfgio {

using nlohmann::json;

inline Activation activation_from(const std::string& s, const std::string& where) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw std::invalid_argument("config: " + where + ": unknown activation '" + s + "'");
}

inline void check_keys(const json& j, const std::set<std::string>& known,
                       const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key))
            throw std::invalid_argument("config: unknown key '" +
                                        (where.empty() ? key : where + "." + key) + "'");
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void maybe_activation(const json& j, const char* key, const std::string& where,
                             Activation& out) {
    if (j.contains(key)) out = activation_from(j.at(key).get<std::string>(), where);
}

inline AgentConfig agent_from_json(const json& j) {
    AgentConfig cfg;
    check_keys(j, {"env", "seed", "total_steps", "eval_episodes", "eval_every_episode",
                   "minibatch", "ensemble", "reward_model", "policy", "rollout",
                   "project_circle", "abort_on_model_error"},
               "");
    maybe(j, "env", cfg.env_name);
    maybe(j, "seed", cfg.seed);
    maybe(j, "total_steps", cfg.total_steps);
    maybe(j, "eval_episodes", cfg.eval_episodes);
    maybe(j, "eval_every_episode", cfg.eval_every_episode);
    maybe(j, "minibatch", cfg.minibatch);
    maybe(j, "project_circle", cfg.project_circle);
    maybe(j, "abort_on_model_error", cfg.abort_on_model_error);
    if (j.contains("ensemble")) {
        const json& e = j.at("ensemble");
        check_keys(e, {"members", "hidden", "activation", "lr", "momentum", "grad_steps"},
                   "ensemble");
        maybe(e, "members", cfg.members);
        maybe(e, "hidden", cfg.dyn_hidden);
        maybe_activation(e, "activation", "ensemble", cfg.dyn_activation);
        maybe(e, "lr", cfg.dyn_lr);
        maybe(e, "momentum", cfg.dyn_momentum);
        maybe(e, "grad_steps", cfg.dyn_grad_steps);
    }
    if (j.contains("reward_model")) {
        const json& e = j.at("reward_model");
        check_keys(e, {"hidden", "activation", "lr", "momentum", "grad_steps"}, "reward_model");
        maybe(e, "hidden", cfg.reward_hidden);
        maybe_activation(e, "activation", "reward_model", cfg.reward_activation);
        maybe(e, "lr", cfg.reward_lr);
        maybe(e, "momentum", cfg.reward_momentum);
        maybe(e, "grad_steps", cfg.reward_grad_steps);
    }
    if (j.contains("policy")) {
        const json& e = j.at("policy");
        check_keys(e, {"hidden", "activation", "lr", "max_grad_norm", "updates_per_step",
                       "exploration_noise"},
                   "policy");
        maybe(e, "hidden", cfg.policy_hidden);
        maybe_activation(e, "activation", "policy", cfg.policy_activation);
        maybe(e, "lr", cfg.policy_lr);
        maybe(e, "max_grad_norm", cfg.policy_max_grad_norm);
        maybe(e, "updates_per_step", cfg.policy_updates_per_step);
        maybe(e, "exploration_noise", cfg.exploration_noise);
    }
    if (j.contains("rollout")) {
        const json& e = j.at("rollout");
        check_keys(e, {"horizon", "discount", "risk", "starts_per_update", "unbiased_variance",
                       "sigma_eps", "parallel_members"},
                   "rollout");
        maybe(e, "horizon", cfg.rollout.horizon);
        maybe(e, "discount", cfg.rollout.discount);
        maybe(e, "risk", cfg.rollout.risk);
        maybe(e, "starts_per_update", cfg.rollout.starts_per_update);
        maybe(e, "unbiased_variance", cfg.rollout.unbiased_variance);
        maybe(e, "sigma_eps", cfg.rollout.sigma_eps);
        maybe(e, "parallel_members", cfg.rollout.parallel_members);
    }
    return cfg;
}

inline json agent_to_json(const AgentConfig& cfg) {
    json j;
    j["env"] = cfg.env_name;
    j["seed"] = cfg.seed;
    j["total_steps"] = cfg.total_steps;
    j["eval_episodes"] = cfg.eval_episodes;
    j["eval_every_episode"] = cfg.eval_every_episode;
    j["minibatch"] = cfg.minibatch;
    j["project_circle"] = cfg.project_circle;
    j["abort_on_model_error"] = cfg.abort_on_model_error;
    j["ensemble"] = {{"members", cfg.members},
                     {"hidden", cfg.dyn_hidden},
                     {"activation", activation_name(cfg.dyn_activation)},
                     {"lr", cfg.dyn_lr},
                     {"momentum", cfg.dyn_momentum},
                     {"grad_steps", cfg.dyn_grad_steps}};
    j["reward_model"] = {{"hidden", cfg.reward_hidden},
                         {"activation", activation_name(cfg.reward_activation)},
                         {"lr", cfg.reward_lr},
                         {"momentum", cfg.reward_momentum},
                         {"grad_steps", cfg.reward_grad_steps}};
    j["policy"] = {{"hidden", cfg.policy_hidden},
                   {"activation", activation_name(cfg.policy_activation)},
                   {"lr", cfg.policy_lr},
                   {"max_grad_norm", cfg.policy_max_grad_norm},
                   {"updates_per_step", cfg.policy_updates_per_step},
                   {"exploration_noise", cfg.exploration_noise}};
    j["rollout"] = {{"horizon", cfg.rollout.horizon},
                    {"discount", cfg.rollout.discount},
                    {"risk", cfg.rollout.risk},
                    {"starts_per_update", cfg.rollout.starts_per_update},
                    {"unbiased_variance", cfg.rollout.unbiased_variance},
                    {"sigma_eps", cfg.rollout.sigma_eps},
                    {"parallel_members", cfg.rollout.parallel_members}};
    return j;
}

inline json parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config: '" + path + "': " + e.what());
    }
}

inline AgentConfig load_agent_config(const std::string& path) {
    return agent_from_json(parse_file(path));
}

inline void freeze_agent_config(const AgentConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write '" + path + "'");
    os << agent_to_json(cfg).dump(2) << "\n";
}

}  // namespace cfgio

}  // namespace umbra
