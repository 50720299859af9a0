#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "umbra/envs.hpp"
#include "umbra/model.hpp"
#include "umbra/policy.hpp"
#include "umbra/replay.hpp"
#include "umbra/rollout.hpp"

namespace umbra {

struct AgentConfig {
    std::string env_name = "pendulum";

    int members = 5;  // B
    std::vector<int> dyn_hidden = {64, 64};
    Activation dyn_activation = Activation::Tanh;
    double dyn_lr = 1e-3;
    double dyn_momentum = 0.0;
    int dyn_grad_steps = 4;
    int minibatch = 32;

    std::vector<int> reward_hidden = {64, 64};
    Activation reward_activation = Activation::Tanh;
    double reward_lr = 1e-3;
    double reward_momentum = 0.0;
    int reward_grad_steps = 4;

    std::vector<int> policy_hidden = {32, 32};
    Activation policy_activation = Activation::Tanh;
    double policy_lr = 1e-3;
    double policy_max_grad_norm = 10.0;
    int policy_updates_per_step = 1;
    double exploration_noise = 0.0;

    RolloutConfig rollout;
    bool project_circle = true;  // keep (cos,sin) observations on the unit circle

    std::uint64_t seed = 0;
    int total_steps = 6000;
    int eval_episodes = 20;
    bool eval_every_episode = true;
    bool abort_on_model_error = false;  // default: skip the step's update and continue

    void validate() const {
        if (members < 2) throw std::invalid_argument("config: members must be >= 2");
        if (dyn_lr <= 0 || reward_lr <= 0 || policy_lr <= 0)
            throw std::invalid_argument("config: learning rates must be positive");
        if (minibatch < 1) throw std::invalid_argument("config: minibatch must be >= 1");
        if (total_steps < 1) throw std::invalid_argument("config: total_steps must be >= 1");
        if (eval_episodes < 1) throw std::invalid_argument("config: eval_episodes must be >= 1");
    }
};

/// One training-loop step's worth of diagnostics. The wall-clock column is
/// kept out of the deterministic metric file by the writer.
struct MetricRow {
    std::int64_t t = 0;
    int episode = 0;
    std::vector<double> dyn_losses;  // per member
    double reward_loss = 0.0;
    double mu = 0.0;     // mean over starts of per-start return mean
    double sigma = 0.0;  // mean over starts of per-start return spread
    double utility = 0.0;
    double grad_norm = 0.0;
    std::optional<double> eval_return;  // present on evaluation steps
    double wall_ms = 0.0;
};

using MetricSink = std::function<void(const MetricRow&)>;

enum class Phase { EnvStep, BootstrapPush, ModelUpdate, UtilityEval, PolicyUpdate };

struct EvalResult {
    double mean_return = 0.0;
    double std_return = 0.0;
    std::vector<double> episode_returns;
};

/// Runs a controller for full episodes on a fresh copy of the environment
/// and returns undiscounted true returns. Never touches learning state.
inline EvalResult evaluate_controller(const Env& proto,
                                      const std::function<Tensor(const Tensor&)>& act,
                                      int episodes, Rng& rng) {
    if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
    EvalResult out;
    auto env = proto.clone();
    for (int e = 0; e < episodes; ++e) {
        Tensor obs = env->reset(rng);
        double ret = 0.0;
        for (;;) {
            const StepResult r = env->step(act(obs));
            ret += r.reward;
            obs = r.obs;
            if (r.done) break;
        }
        out.episode_returns.push_back(ret);
    }
    double sum = 0;
    for (double r : out.episode_returns) sum += r;
    out.mean_return = sum / episodes;
    double var = 0;
    for (double r : out.episode_returns) var += (r - out.mean_return) * (r - out.mean_return);
    out.std_return = std::sqrt(var / episodes);
    return out;
}

inline EvalResult evaluate_policy(const Env& proto, const Policy& policy, int episodes,
                                  Rng& rng) {
    return evaluate_controller(
        proto, [&policy](const Tensor& s) { return policy.act(s); }, episodes, rng);
}

/// The training loop: act, bootstrap-push, model update, utility evaluation,
/// policy ascent, in that order, once per physical step. Per-step cost does
/// not grow with the dataset.
class Agent {
public:
    struct RunRecord {
        std::int64_t steps = 0;
        int episodes = 0;
        int model_errors = 0;
        int skipped_policy_updates = 0;
        std::vector<double> eval_returns;  // one per scheduled evaluation
    };

    explicit Agent(AgentConfig cfg)
        : cfg_(std::move(cfg)),
          env_(make_env(cfg_.env_name)),
          env_rng_(Rng::child(cfg_.seed, 1)),
          replay_rng_(Rng::child(cfg_.seed, 2)),
          sample_rng_(Rng::child(cfg_.seed, 3)),
          start_rng_(Rng::child(cfg_.seed, 4)),
          noise_rng_(Rng::child(cfg_.seed, 5)),
          store_(env_->spec().state_dim, env_->spec().action_dim, cfg_.members) {
        cfg_.validate();
        cfg_.rollout.validate(env_->spec().horizon);
        Rng init_ens = Rng::child(cfg_.seed, 10);
        Rng init_rwd = Rng::child(cfg_.seed, 11);
        Rng init_pol = Rng::child(cfg_.seed, 12);
        const EnvSpec& spec = env_->spec();
        ensemble_.emplace(cfg_.members, spec.state_dim, spec.action_dim, cfg_.dyn_hidden,
                          cfg_.dyn_activation, init_ens);
        reward_model_.emplace(spec.state_dim, spec.action_dim, cfg_.reward_hidden,
                              cfg_.reward_activation, init_rwd);
        policy_.emplace(spec.state_dim, spec.action_dim, cfg_.policy_hidden,
                        cfg_.policy_activation, spec.action_low, spec.action_high, init_pol);
        if (cfg_.project_circle && spec.name == "pendulum")
            projection_ = circle_projection(spec.state_dim);
    }

    const AgentConfig& config() const { return cfg_; }
    Env& env() { return *env_; }
    ReplayStore& store() { return store_; }
    DynamicsEnsemble& ensemble() { return *ensemble_; }
    RewardModel& reward_model() { return *reward_model_; }
    Policy& policy() { return *policy_; }
    const std::vector<MemberUpdate>& last_dyn_reports() const { return last_dyn_reports_; }

    void set_phase_observer(std::function<void(Phase, std::int64_t)> obs) {
        phase_observer_ = std::move(obs);
    }

    /// Pre-fills the replay buffers from a transition file (each example is
    /// bootstrap-pushed exactly like a live one). Loading an empty file is a
    /// no-op that leaves every random stream untouched.
    void warm_start_dataset(const std::string& path) {
        for (const Transition& tr : load_transitions(path, env_->spec())) absorb(tr);
    }

    void warm_start_policy(const std::string& path) { policy_->load(path); }

    RunRecord run(int total_steps, const MetricSink& sink = {}) {
        RunRecord rec;
        Tensor obs = env_->reset(env_rng_);
        for (int step = 0; step < total_steps; ++step) {
            const auto t0 = std::chrono::steady_clock::now();
            MetricRow row;
            row.t = t_ + 1;
            row.episode = episode_;

            // 1. act in the environment, collect the new data point
            notify(Phase::EnvStep);
            Tensor action = policy_->act(obs);
            if (cfg_.exploration_noise > 0.0) {
                for (std::size_t i = 0; i < action.numel(); ++i)
                    action[i] += cfg_.exploration_noise * noise_rng_.normal();
                clamp_action(action);
            }
            Transition tr;
            tr.s = obs;
            tr.a = action;
            const StepResult sr = env_->step(action);
            tr.s2 = sr.obs;
            tr.r = sr.reward;
            obs = sr.obs;

            // 2. bootstrap-push into every logical dataset
            notify(Phase::BootstrapPush);
            absorb(tr);

            // 3. one round of model updates
            notify(Phase::ModelUpdate);
            try {
                last_dyn_reports_ =
                    ensemble_->update(store_, cfg_.minibatch, cfg_.dyn_grad_steps, cfg_.dyn_lr,
                                      cfg_.dyn_momentum, WeightScheme::Linear, sample_rng_);
                row.dyn_losses.clear();
                for (const auto& r : last_dyn_reports_) row.dyn_losses.push_back(r.loss);
                row.reward_loss = reward_model_
                                      ->update(store_, cfg_.minibatch, cfg_.reward_grad_steps,
                                               cfg_.reward_lr, cfg_.reward_momentum,
                                               WeightScheme::Linear, sample_rng_)
                                      .loss;
            } catch (const std::exception&) {
                ++rec.model_errors;
                if (cfg_.abort_on_model_error) throw;
            }

            // 4.+5. utility of the current policy, then gradient ascent
            for (int u = 0; u < cfg_.policy_updates_per_step; ++u) {
                notify(Phase::UtilityEval);
                try {
                    const Tensor starts = sample_starts(cfg_.rollout.starts_per_update);
                    const UtilityGradient ug = policy_utility_gradient(
                        *ensemble_, *reward_model_, *policy_, starts, cfg_.rollout, projection_);
                    row.utility = ug.utility;
                    row.mu = mean_of(ug.mu);
                    row.sigma = mean_of(ug.sigma);
                    row.grad_norm = ug.grad_norm;
                    notify(Phase::PolicyUpdate);
                    if (!ug.finite ||
                        !policy_->improve(ug.policy_grad, cfg_.policy_lr,
                                          cfg_.policy_max_grad_norm))
                        ++rec.skipped_policy_updates;
                } catch (const std::exception&) {
                    ++rec.skipped_policy_updates;
                }
            }

            ++t_;
            ++rec.steps;
            if (sr.done) {
                ++episode_;
                ++rec.episodes;
                if (cfg_.eval_every_episode) {
                    Rng eval_rng = Rng::child(cfg_.seed, 1000 + static_cast<std::uint64_t>(episode_));
                    const EvalResult ev =
                        evaluate_policy(*env_, *policy_, cfg_.eval_episodes, eval_rng);
                    row.eval_return = ev.mean_return;
                    rec.eval_returns.push_back(ev.mean_return);
                }
                obs = env_->reset(env_rng_);
            }
            row.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            if (sink) sink(row);
        }
        return rec;
    }

    RunRecord run(const MetricSink& sink = {}) { return run(cfg_.total_steps, sink); }

    EvalResult evaluate(int episodes, std::uint64_t salt = 0) const {
        Rng eval_rng = Rng::child(cfg_.seed, 2000 + salt);
        return evaluate_policy(*env_, *policy_, episodes, eval_rng);
    }

    void save_checkpoints(const std::string& dir) const {
        for (int k = 0; k < ensemble_->size(); ++k)
            ensemble_->member(k).save(dir + "/dyn_" + std::to_string(k) + ".params");
        reward_model_->params().save(dir + "/reward.params");
        policy_->save(dir + "/policy.params");
    }

    std::int64_t step_count() const { return t_; }
    int episode_count() const { return episode_; }

    // Transition file format (documented in docs/formats.md):
    //   # umbra-transitions v1 state_dim=<n> action_dim=<m>
    //   s...,a...,s'...,r     (one CSV row per transition)
    static std::vector<Transition> load_transitions(const std::string& path,
                                                    const EnvSpec& spec) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("transitions: cannot open '" + path + "'");
        std::string header;
        if (!std::getline(is, header) || header.find("umbra-transitions v1") == std::string::npos)
            throw std::runtime_error("transitions: '" + path + "' has no v1 header");
        int sd = -1, ad = -1;
        {
            const auto spos = header.find("state_dim=");
            const auto apos = header.find("action_dim=");
            if (spos == std::string::npos || apos == std::string::npos)
                throw std::runtime_error("transitions: header missing dims");
            sd = std::stoi(header.substr(spos + 10));
            ad = std::stoi(header.substr(apos + 11));
        }
        if (sd != spec.state_dim || ad != spec.action_dim)
            throw std::invalid_argument(
                "transitions: file dims (" + std::to_string(sd) + "," + std::to_string(ad) +
                ") do not match env dims (" + std::to_string(spec.state_dim) + "," +
                std::to_string(spec.action_dim) + ")");
        std::vector<Transition> out;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::vector<double> vals;
            std::string cell;
            while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
            if (vals.size() != static_cast<std::size_t>(2 * sd + ad + 1))
                throw std::runtime_error("transitions: bad row width in '" + path + "'");
            Transition tr;
            tr.s = Tensor({sd}, {vals.begin(), vals.begin() + sd});
            tr.a = Tensor({ad}, {vals.begin() + sd, vals.begin() + sd + ad});
            tr.s2 = Tensor({sd}, {vals.begin() + sd + ad, vals.begin() + 2 * sd + ad});
            tr.r = vals.back();
            out.push_back(std::move(tr));
        }
        return out;
    }

    static void save_transitions(const std::string& path, const std::vector<Transition>& txs,
                                 const EnvSpec& spec) {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("transitions: cannot open '" + path + "' for writing");
        os << "# umbra-transitions v1 state_dim=" << spec.state_dim
           << " action_dim=" << spec.action_dim << "\n";
        os.precision(17);
        for (const Transition& tr : txs) {
            for (std::size_t i = 0; i < tr.s.numel(); ++i) os << tr.s[i] << ',';
            for (std::size_t i = 0; i < tr.a.numel(); ++i) os << tr.a[i] << ',';
            for (std::size_t i = 0; i < tr.s2.numel(); ++i) os << tr.s2[i] << ',';
            os << tr.r << "\n";
        }
    }

private:
    void absorb(const Transition& tr) {
        store_.push(tr, replay_rng_);
        ensemble_->observe(tr.s, tr.a);
        reward_model_->observe(tr.s, tr.a);
    }

    Tensor sample_starts(int n) {
        const auto idx = store_.sample_master(WeightScheme::Linear, n, start_rng_);
        const int sd = env_->spec().state_dim;
        Tensor starts({n, sd});
        for (int r = 0; r < n; ++r) {
            const Transition& tr = store_.transition(idx[static_cast<std::size_t>(r)]);
            for (int c = 0; c < sd; ++c) starts.at(r, c) = tr.s[c];
        }
        return starts;
    }

    void clamp_action(Tensor& a) const {
        const EnvSpec& spec = env_->spec();
        if (!spec.bounded_actions()) return;
        for (std::size_t i = 0; i < a.numel(); ++i)
            a[i] = std::clamp(a[i], spec.action_low[i], spec.action_high[i]);
    }

    void notify(Phase p) {
        if (phase_observer_) phase_observer_(p, t_ + 1);
    }

    static double mean_of(const std::vector<double>& v) {
        if (v.empty()) return 0.0;
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    }

    AgentConfig cfg_;
    std::unique_ptr<Env> env_;
    Rng env_rng_, replay_rng_, sample_rng_, start_rng_, noise_rng_;
    ReplayStore store_;
    std::optional<DynamicsEnsemble> ensemble_;
    std::optional<RewardModel> reward_model_;
    std::optional<Policy> policy_;
    StateProjection projection_;
    std::vector<MemberUpdate> last_dyn_reports_;
    std::function<void(Phase, std::int64_t)> phase_observer_;
    std::int64_t t_ = 0;
    int episode_ = 0;
};

}  // namespace umbra
