#pragma once

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "umbra/agent.hpp"
#include "umbra/metrics.hpp"

namespace umbra {

/// Model-error measurement: how fast does the value-estimate error grow with
/// the planning depth, versus the flat one-step prediction error.
struct ErrorCurvePoint {
    int horizon = 0;
    double one_step_mse = 0.0;
    double value_mse_mean = 0.0;
    double value_mse_std = 0.0;
};

struct ErrorAnalysisOptions {
    int train_transitions = 3000;  // random-action collection budget
    int train_rounds = 2000;       // model update rounds before measuring
    int probes = 200;              // (start state, policy) pairs
    std::vector<int> horizons = {1, 5, 10, 20, 40};
    double discount = 0.99;
    std::uint64_t seed = 0;
};

using DynamicsFactory = std::function<TapeDynamics(Tape&)>;
using RewardFactory = std::function<TapeReward(Tape&)>;
using PlainDynamics = std::function<Tensor(const Tensor& s, const Tensor& a)>;

/// Core measurement, generic over the model being probed so that the same
/// code path can run with learned members or with the true dynamics wired
/// in. For each probe pair and each horizon: squared error of the mean
/// value estimate against the oracle value, plus the per-step one-step MSE
/// of the members along the true trajectory.
inline std::vector<ErrorCurvePoint> measure_error_curve(
    Env& env, const std::vector<DynamicsFactory>& member_factories,
    const RewardFactory& reward_factory, const std::vector<PlainDynamics>& member_steps,
    const ErrorAnalysisOptions& opt, const StateProjection& projection) {
    if (opt.probes < 1) throw std::invalid_argument("error-analysis: needs probes >= 1");
    Rng probe_rng = Rng::child(opt.seed, 300);

    // fixed probe set: start states and randomly initialized policies
    std::vector<Tensor> starts;
    std::vector<Policy> policies;
    const EnvSpec& spec = env.spec();
    for (int p = 0; p < opt.probes; ++p) {
        starts.push_back(env.reset(probe_rng));
        Rng pol_rng = Rng::child(opt.seed, 400 + static_cast<std::uint64_t>(p));
        policies.emplace_back(spec.state_dim, spec.action_dim, std::vector<int>{16},
                              Activation::Tanh, spec.action_low, spec.action_high, pol_rng);
    }

    std::vector<ErrorCurvePoint> curve;
    for (int H : opt.horizons) {
        ErrorCurvePoint point;
        point.horizon = H;
        std::vector<double> sq_errors;
        double one_step_acc = 0.0;
        std::int64_t one_step_n = 0;

        for (int p = 0; p < opt.probes; ++p) {
            const Policy& pol = policies[static_cast<std::size_t>(p)];
            auto act = [&pol](const Tensor& s) { return pol.act(s); };

            // mean value estimate across members, one tape per probe
            Tape t;
            std::vector<TapeDynamics> members;
            members.reserve(member_factories.size());
            for (const auto& f : member_factories) members.push_back(f(t));
            RolloutConfig rc;
            rc.horizon = std::max(H, 0);
            rc.discount = opt.discount;
            rc.risk = 0.0;
            NodeId s0 = t.leaf(Tensor({1, spec.state_dim},
                                      {starts[p].data(), starts[p].data() + starts[p].numel()}));
            const auto pol_nodes = pol.to_tape(t, false);
            const TapePolicy pol_fn = [&pol_nodes](Tape& tp, NodeId s) {
                return pol_nodes.act(tp, s);
            };
            const TapeReward reward_fn = reward_factory(t);
            std::vector<NodeId> rets;
            for (std::size_t k = 0; k < members.size(); ++k)
                rets.push_back(rollout_return(t, members[k], reward_fn, pol_fn, s0, H,
                                              opt.discount, projection));
            double mu = 0.0;
            for (NodeId r : rets) mu += t.val(r).item();
            mu /= static_cast<double>(rets.size());

            const double oracle = value_oracle(env, act, starts[p], H, opt.discount);
            sq_errors.push_back((mu - oracle) * (mu - oracle));

            // one-step errors along the true trajectory
            Tensor s = starts[p];
            for (int step = 0; step < H; ++step) {
                const Tensor a = pol.act(s);
                const Tensor s_next = env.oracle_dynamics(s, a);
                for (const auto& predict : member_steps) {
                    const Tensor pred = predict(s, a);
                    double err = 0.0;
                    for (std::size_t d = 0; d < pred.numel(); ++d)
                        err += (pred[d] - s_next[d]) * (pred[d] - s_next[d]);
                    one_step_acc += err;
                    ++one_step_n;
                }
                s = s_next;
            }
        }

        double mean = 0.0;
        for (double e : sq_errors) mean += e;
        mean /= static_cast<double>(sq_errors.size());
        double var = 0.0;
        for (double e : sq_errors) var += (e - mean) * (e - mean);
        point.value_mse_mean = mean;
        point.value_mse_std = std::sqrt(var / static_cast<double>(sq_errors.size()));
        point.one_step_mse = one_step_n > 0 ? one_step_acc / static_cast<double>(one_step_n) : 0.0;
        curve.push_back(point);
    }
    return curve;
}

/// Standard wiring: collect random-action data, train the world model on a
/// fixed budget, then measure the curve with the learned members.
inline std::vector<ErrorCurvePoint> error_analysis(const AgentConfig& cfg,
                                                   const ErrorAnalysisOptions& opt) {
    auto env = make_env(cfg.env_name);
    const EnvSpec& spec = env->spec();

    Rng collect_rng = Rng::child(opt.seed, 100);
    Rng push_rng = Rng::child(opt.seed, 101);
    ReplayStore store(spec.state_dim, spec.action_dim, cfg.members);
    Rng init_e = Rng::child(opt.seed, 102);
    Rng init_r = Rng::child(opt.seed, 103);
    DynamicsEnsemble ensemble(cfg.members, spec.state_dim, spec.action_dim, cfg.dyn_hidden,
                              cfg.dyn_activation, init_e);
    RewardModel reward(spec.state_dim, spec.action_dim, cfg.reward_hidden, cfg.reward_activation,
                       init_r);

    Tensor obs = env->reset(collect_rng);
    for (int i = 0; i < opt.train_transitions; ++i) {
        Tensor a({spec.action_dim});
        for (int d = 0; d < spec.action_dim; ++d)
            a[d] = spec.bounded_actions()
                       ? collect_rng.uniform(spec.action_low[d], spec.action_high[d])
                       : collect_rng.normal();
        Transition tr;
        tr.s = obs;
        tr.a = a;
        const StepResult sr = env->step(a);
        tr.s2 = sr.obs;
        tr.r = sr.reward;
        store.push(tr, push_rng);
        ensemble.observe(tr.s, tr.a);
        reward.observe(tr.s, tr.a);
        obs = sr.done ? env->reset(collect_rng) : sr.obs;
    }

    Rng train_rng = Rng::child(opt.seed, 104);
    for (int round = 0; round < opt.train_rounds; ++round) {
        ensemble.update(store, cfg.minibatch, 1, cfg.dyn_lr, cfg.dyn_momentum,
                        WeightScheme::Linear, train_rng);
        reward.update(store, cfg.minibatch, 1, cfg.reward_lr, cfg.reward_momentum,
                      WeightScheme::Linear, train_rng);
    }

    std::vector<DynamicsFactory> factories;
    std::vector<PlainDynamics> steps;
    for (int k = 0; k < ensemble.size(); ++k) {
        factories.push_back([&ensemble, k](Tape& t) -> TapeDynamics {
            auto dyn = ensemble.to_tape(t, k, false);
            return [dyn](Tape& tp, NodeId s, NodeId a) { return dyn.next_state(tp, s, a); };
        });
        steps.push_back([&ensemble, k](const Tensor& s, const Tensor& a) {
            return ensemble.predict_next(k, s, a);
        });
    }
    RewardFactory reward_factory = [&reward](Tape& t) -> TapeReward {
        auto r = reward.to_tape(t, false);
        return [r](Tape& tp, NodeId s, NodeId a) { return r.reward(tp, s, a); };
    };
    const StateProjection projection =
        (cfg.project_circle && spec.name == "pendulum") ? circle_projection(spec.state_dim)
                                                        : StateProjection{};
    return measure_error_curve(*env, factories, reward_factory, steps, opt, projection);
}

inline void write_error_curve_csv(const std::string& path,
                                  const std::vector<ErrorCurvePoint>& curve) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("error-analysis: cannot open '" + path + "'");
    os << "horizon,one_step_mse,value_mse_mean,value_mse_std\r\n";
    for (const auto& p : curve)
        os << p.horizon << ',' << format_double(p.one_step_mse) << ','
           << format_double(p.value_mse_mean) << ',' << format_double(p.value_mse_std) << "\r\n";
}

}  // namespace umbra
