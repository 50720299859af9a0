#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "umbra/env.hpp"
#include "umbra/model.hpp"
#include "umbra/policy.hpp"
#include "umbra/tape.hpp"

namespace umbra {

struct RolloutConfig {
    int horizon = 15;           // H, planning depth through the learned models
    double discount = 0.99;     // gamma
    double risk = 0.5;          // c; positive prefers high-spread outcomes
    int starts_per_update = 8;  // states per utility evaluation
    bool unbiased_variance = false;  // population variance by default
    double sigma_eps = 1e-12;        // sigma = sqrt(var + eps)
    bool parallel_members = false;   // per-member rollouts on worker threads

    void validate(int task_horizon) const {
        if (horizon < 1 || (task_horizon > 0 && horizon > task_horizon))
            throw std::invalid_argument("RolloutConfig: horizon must be in [1, T]");
        if (discount <= 0.0 || discount >= 1.0)
            throw std::invalid_argument("RolloutConfig: discount must be in (0,1)");
        if (starts_per_update < 1)
            throw std::invalid_argument("RolloutConfig: starts_per_update must be >= 1");
    }
};

using TapeDynamics = std::function<NodeId(Tape&, NodeId s, NodeId a)>;
using TapeReward = std::function<NodeId(Tape&, NodeId s, NodeId a)>;
using TapePolicy = std::function<NodeId(Tape&, NodeId s)>;
using StateProjection = std::function<NodeId(Tape&, NodeId s)>;

/// Renormalizes the first two state columns onto the unit circle (for
/// observations of the form (cos, sin, rest...)); keeps imagined rollouts on
/// the manifold the models were trained on.
inline StateProjection circle_projection(int state_dim) {
    return [state_dim](Tape& t, NodeId s) {
        NodeId c = t.slice_cols(s, 0, 1);
        NodeId si = t.slice_cols(s, 1, 2);
        NodeId norm = t.sqrt_eps(t.add(t.square(c), t.square(si)), 1e-12);
        NodeId head = t.concat_cols(t.div(c, norm), t.div(si, norm));
        if (state_dim <= 2) return head;
        return t.concat_cols(head, t.slice_cols(s, 2, state_dim));
    };
}

/// Discounted return node sum_{t=0..H} gamma^t R(s_t, pi(s_t)) of one model
/// unrolled from s0 (a (N,state_dim) batch of starts; the result is (N,1)).
/// The whole unroll is recorded on the tape, so gradients flow through
/// dynamics, reward, and policy applications.
inline NodeId rollout_return(Tape& t, const TapeDynamics& dynamics, const TapeReward& reward,
                             const TapePolicy& policy, NodeId s0, int horizon, double discount,
                             const StateProjection& project = nullptr,
                             const std::string& label = "") {
    NodeId s = s0;
    NodeId a = policy(t, s);
    NodeId ret = reward(t, s, a);
    double gamma_pow = 1.0;
    for (int step = 1; step <= horizon; ++step) {
        s = dynamics(t, s, a);
        if (project) s = project(t, s);
        if (!t.val(s).all_finite())
            throw std::runtime_error("rollout" + (label.empty() ? "" : " [" + label + "]") +
                                     ": non-finite state at step " + std::to_string(step));
        gamma_pow *= discount;
        a = policy(t, s);
        ret = t.add(ret, t.scalar_mul(reward(t, s, a), gamma_pow));
    }
    return ret;
}

/// The per-start spread statistics of one utility evaluation, all living on
/// the evaluation tape.
struct UtilityEval {
    NodeId utility = -1;                // scalar: mean over starts of mu + c*sigma
    NodeId mean_vec = -1;               // (N,1)
    NodeId std_vec = -1;                // (N,1)
    std::vector<NodeId> member_returns; // one (N,1) node per model
    int num_starts = 0;
};

/// mu/sigma reduction over per-member returns, then U = mean_starts(mu+c*sigma).
inline UtilityEval reduce_returns(Tape& t, const std::vector<NodeId>& returns,
                                  const RolloutConfig& cfg) {
    const int members = static_cast<int>(returns.size());
    if (members < 2)
        throw std::invalid_argument("utility: needs >= 2 return estimates, got " +
                                    std::to_string(members));
    UtilityEval out;
    out.member_returns = returns;
    out.num_starts = t.val(returns[0]).rows();

    NodeId acc = returns[0];
    for (int k = 1; k < members; ++k) acc = t.add(acc, returns[k]);
    out.mean_vec = t.scalar_mul(acc, 1.0 / members);

    NodeId sq = t.square(t.sub(returns[0], out.mean_vec));
    for (int k = 1; k < members; ++k)
        sq = t.add(sq, t.square(t.sub(returns[k], out.mean_vec)));
    const double denom = cfg.unbiased_variance ? members - 1 : members;
    NodeId var = t.scalar_mul(sq, 1.0 / denom);
    out.std_vec = t.sqrt_eps(var, cfg.sigma_eps);

    out.utility = t.mean(t.add(out.mean_vec, t.scalar_mul(out.std_vec, cfg.risk)));
    return out;
}

/// Single-tape utility evaluation: B rollouts from the same starts, reduced
/// to U = E_starts[mu + c*sigma].
inline UtilityEval evaluate_utility(Tape& t, const std::vector<TapeDynamics>& members,
                                    const TapeReward& reward, const TapePolicy& policy,
                                    const Tensor& starts, const RolloutConfig& cfg,
                                    const StateProjection& project = nullptr) {
    if (starts.rows() < 1 || starts.numel() == 0)
        throw std::invalid_argument("evaluate_utility: no start states");
    NodeId s0 = t.leaf(starts);
    std::vector<NodeId> returns;
    returns.reserve(members.size());
    for (std::size_t k = 0; k < members.size(); ++k)
        returns.push_back(rollout_return(t, members[k], reward, policy, s0, cfg.horizon,
                                         cfg.discount, project, "member " + std::to_string(k)));
    return reduce_returns(t, returns, cfg);
}

/// True-environment value of a policy: the same truncated discounted sum
/// computed with the oracle dynamics/reward. Measurement only.
inline double value_oracle(const Env& env, const std::function<Tensor(const Tensor&)>& policy,
                           const Tensor& s0, int horizon, double discount) {
    Tensor s = s0;
    Tensor a = policy(s);
    double ret = env.oracle_reward(s, a);
    double gamma_pow = 1.0;
    for (int step = 1; step <= horizon; ++step) {
        s = env.oracle_dynamics(s, a);
        gamma_pow *= discount;
        a = policy(s);
        ret += gamma_pow * env.oracle_reward(s, a);
    }
    return ret;
}

/// Wraps an environment's true transition function as a tape op. The result
/// enters the tape as a constant (no gradient), value-identical to the
/// oracle; used for model-error measurement and equivalence checks.
inline TapeDynamics oracle_dynamics_on_tape(const Env& env) {
    return [&env](Tape& t, NodeId s, NodeId a) {
        const Tensor& sv = t.val(s);
        const Tensor& av = t.val(a);
        Tensor next(sv.shape());
        for (int r = 0; r < sv.rows(); ++r) {
            Tensor srow({sv.cols()}), arow({av.cols()});
            for (int c = 0; c < sv.cols(); ++c) srow[c] = sv.at(r, c);
            for (int c = 0; c < av.cols(); ++c) arow[c] = av.at(r, c);
            const Tensor nrow = env.oracle_dynamics(srow, arow);
            for (int c = 0; c < sv.cols(); ++c) next.at(r, c) = nrow[c];
        }
        return t.constant(std::move(next));
    };
}

inline TapeReward oracle_reward_on_tape(const Env& env) {
    return [&env](Tape& t, NodeId s, NodeId a) {
        const Tensor& sv = t.val(s);
        const Tensor& av = t.val(a);
        Tensor r(sv.rank() == 2 ? std::vector<int>{sv.rows(), 1} : std::vector<int>{1});
        for (int row = 0; row < sv.rows(); ++row) {
            Tensor srow({sv.cols()}), arow({av.cols()});
            for (int c = 0; c < sv.cols(); ++c) srow[c] = sv.at(row, c);
            for (int c = 0; c < av.cols(); ++c) arow[c] = av.at(row, c);
            r[static_cast<std::size_t>(row)] = env.oracle_reward(srow, arow);
        }
        return t.constant(std::move(r));
    };
}

/// One utility evaluation plus its policy gradient.
struct UtilityGradient {
    double utility = 0.0;
    std::vector<double> mu, sigma;  // per start
    Tensor returns;                 // (B, N)
    ParamSet policy_grad;
    double grad_norm = 0.0;
    bool finite = true;
};

namespace detail {

inline void fill_stats(UtilityGradient& out, const Tape& t, const UtilityEval& eval) {
    out.utility = t.val(eval.utility).item();
    const Tensor& mu = t.val(eval.mean_vec);
    const Tensor& sd = t.val(eval.std_vec);
    out.mu.assign(mu.data(), mu.data() + mu.numel());
    out.sigma.assign(sd.data(), sd.data() + sd.numel());
    const int members = static_cast<int>(eval.member_returns.size());
    out.returns = Tensor({members, eval.num_starts});
    for (int k = 0; k < members; ++k) {
        const Tensor& r = t.val(eval.member_returns[k]);
        for (int n = 0; n < eval.num_starts; ++n) out.returns.at(k, n) = r[n];
    }
}

}  // namespace detail

/// Evaluates U at the given starts and backpropagates dU/d(theta). With
/// `cfg.parallel_members` the B rollouts run on independent tapes joined by
/// a reduction tape; the result matches the single-tape gradient within
/// floating-point reassociation error.
inline UtilityGradient policy_utility_gradient(const DynamicsEnsemble& ensemble,
                                               const RewardModel& reward_model, const Policy& policy,
                                               const Tensor& starts, const RolloutConfig& cfg,
                                               const StateProjection& project = nullptr) {
    UtilityGradient out;
    if (!cfg.parallel_members) {
        Tape t;
        std::vector<TapeDynamics> members;
        for (int k = 0; k < ensemble.size(); ++k) {
            auto dyn = ensemble.to_tape(t, k, false);
            members.push_back([dyn](Tape& tp, NodeId s, NodeId a) { return dyn.next_state(tp, s, a); });
        }
        auto rwd = reward_model.to_tape(t, false);
        auto pol = policy.to_tape(t, true);
        const UtilityEval eval = evaluate_utility(
            t, members, [rwd](Tape& tp, NodeId s, NodeId a) { return rwd.reward(tp, s, a); },
            [pol](Tape& tp, NodeId s) { return pol.act(tp, s); }, starts, cfg, project);
        t.backward(eval.utility);
        detail::fill_stats(out, t, eval);
        out.policy_grad = policy.grads_from(t, pol);
    } else {
        const int members = ensemble.size();
        std::vector<Tape> tapes(static_cast<std::size_t>(members));
        std::vector<NodeId> return_nodes(static_cast<std::size_t>(members), -1);
        std::vector<Policy::OnTape> pols(static_cast<std::size_t>(members));
        std::vector<std::string> errors(static_cast<std::size_t>(members));

        auto roll_one = [&](int k) {
            try {
                Tape& t = tapes[static_cast<std::size_t>(k)];
                auto dyn = ensemble.to_tape(t, k, false);
                auto rwd = reward_model.to_tape(t, false);
                pols[static_cast<std::size_t>(k)] = policy.to_tape(t, true);
                const auto& pol = pols[static_cast<std::size_t>(k)];
                return_nodes[static_cast<std::size_t>(k)] = rollout_return(
                    t, [dyn](Tape& tp, NodeId s, NodeId a) { return dyn.next_state(tp, s, a); },
                    [rwd](Tape& tp, NodeId s, NodeId a) { return rwd.reward(tp, s, a); },
                    [&pol](Tape& tp, NodeId s) { return pol.act(tp, s); }, t.leaf(starts),
                    cfg.horizon, cfg.discount, project, "member " + std::to_string(k));
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(k)] = e.what();
            }
        };
        std::vector<std::thread> workers;
        workers.reserve(static_cast<std::size_t>(members));
        for (int k = 0; k < members; ++k) workers.emplace_back(roll_one, k);
        for (auto& w : workers) w.join();
        for (const auto& err : errors)
            if (!err.empty()) throw std::runtime_error(err);

        // reduction tape over the B return vectors
        Tape rt;
        std::vector<NodeId> leaves;
        leaves.reserve(static_cast<std::size_t>(members));
        for (int k = 0; k < members; ++k)
            leaves.push_back(rt.leaf(tapes[static_cast<std::size_t>(k)].val(
                                         return_nodes[static_cast<std::size_t>(k)]),
                                     true));
        const UtilityEval eval = reduce_returns(rt, leaves, cfg);
        rt.backward(eval.utility);
        detail::fill_stats(out, rt, eval);

        // seed each member tape with dU/d(return_k) and sum theta grads in
        // member order
        for (int k = 0; k < members; ++k) {
            Tape& t = tapes[static_cast<std::size_t>(k)];
            t.backward_seeded(return_nodes[static_cast<std::size_t>(k)], rt.grad(leaves[k]));
            ParamSet g = policy.grads_from(t, pols[static_cast<std::size_t>(k)]);
            if (out.policy_grad.size() == 0) {
                out.policy_grad = std::move(g);
            } else {
                for (std::size_t e = 0; e < g.size(); ++e) {
                    Tensor& acc = out.policy_grad.tensor(e);
                    const Tensor& add = g.tensor(e);
                    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += add[i];
                }
            }
        }
    }

    double sq = 0.0;
    for (std::size_t e = 0; e < out.policy_grad.size(); ++e) {
        const Tensor& g = out.policy_grad.tensor(e);
        for (std::size_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    }
    out.grad_norm = std::sqrt(sq);
    out.finite = std::isfinite(out.utility) && std::isfinite(sq);
    return out;
}

}  // namespace umbra
