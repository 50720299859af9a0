#include <gtest/gtest.h>

#include "support/gradcheck.hpp"
#include "umbra/envs.hpp"
#include "umbra/rollout.hpp"

using namespace umbra;
namespace ts = testsupport;

namespace {

// tiny world shared by several tests: 2-D state, 1-D action
struct TinyWorld {
    DynamicsEnsemble ens;
    RewardModel rwd;
    Policy pol;

    explicit TinyWorld(std::uint64_t seed, int members = 2, std::vector<int> pol_hidden = {4})
        : ens(members, 2, 1, {8}, Activation::Tanh, *make_rng(seed)),
          rwd(2, 1, {8}, Activation::Tanh, *make_rng(seed + 1)),
          pol(2, 1, std::move(pol_hidden), Activation::Tanh, Tensor::vector({-2}),
              Tensor::vector({2}), *make_rng(seed + 2)) {
        Rng data(seed + 3);
        for (int i = 0; i < 25; ++i) {
            const Tensor s = Tensor::vector({data.normal(), data.normal()});
            const Tensor a = Tensor::vector({data.normal()});
            ens.observe(s, a);
            rwd.observe(s, a);
        }
    }

    static std::unique_ptr<Rng> make_rng(std::uint64_t seed) {
        return std::make_unique<Rng>(seed);
    }

    double utility_value(const Tensor& starts, const RolloutConfig& cfg) const {
        Tape t;
        std::vector<TapeDynamics> members;
        for (int k = 0; k < ens.size(); ++k) {
            auto dyn = ens.to_tape(t, k, false);
            members.push_back(
                [dyn](Tape& tp, NodeId s, NodeId a) { return dyn.next_state(tp, s, a); });
        }
        auto r = rwd.to_tape(t, false);
        auto p = pol.to_tape(t, false);
        const auto eval = evaluate_utility(
            t, members, [r](Tape& tp, NodeId s, NodeId a) { return r.reward(tp, s, a); },
            [p](Tape& tp, NodeId s) { return p.act(tp, s); }, starts, cfg);
        return t.val(eval.utility).item();
    }
};

TapeDynamics identity_dynamics() {
    return [](Tape&, NodeId s, NodeId) { return s; };
}

TapeReward constant_reward(double value) {
    return [value](Tape& t, NodeId s, NodeId) {
        const int n = t.val(s).rows();
        return t.constant(Tensor::full({n, 1}, value));
    };
}

TapePolicy zero_policy(int action_dim) {
    return [action_dim](Tape& t, NodeId s) {
        const int n = t.val(s).rows();
        return t.constant(Tensor::zeros({n, action_dim}));
    };
}

TapePolicy t_policy(Tape& t, const Policy& pol) {
    auto p = pol.to_tape(t, false);
    return [p](Tape& tp, NodeId s) { return p.act(tp, s); };
}

Tensor reshape_row(const Tensor& v) {
    return Tensor({1, static_cast<int>(v.numel())},
                  std::vector<double>(v.data(), v.data() + v.numel()));
}

}  // namespace

TEST(Rollout, HorizonZeroIsOneRewardTerm) {
    TinyWorld w(100);
    Tape t;
    auto dyn = w.ens.to_tape(t, 0, false);
    auto r = w.rwd.to_tape(t, false);
    auto p = w.pol.to_tape(t, false);
    NodeId s0 = t.leaf(Tensor({1, 2}, {0.4, -0.7}));
    NodeId ret = rollout_return(
        t, [&](Tape& tp, NodeId s, NodeId a) { return dyn.next_state(tp, s, a); },
        [&](Tape& tp, NodeId s, NodeId a) { return r.reward(tp, s, a); },
        [&](Tape& tp, NodeId s) { return p.act(tp, s); }, s0, 0, 0.99);
    const Tensor s = Tensor::vector({0.4, -0.7});
    const Tensor a = w.pol.act(s);
    EXPECT_NEAR(t.val(ret).item(), w.rwd.predict(s, a), 1e-12);
}

TEST(Rollout, ZeroDiscountEqualsHorizonZero) {
    TinyWorld w(101);
    Tape t;
    auto dyn = w.ens.to_tape(t, 0, false);
    auto r = w.rwd.to_tape(t, false);
    auto p = w.pol.to_tape(t, false);
    auto dfn = [&](Tape& tp, NodeId s, NodeId a) { return dyn.next_state(tp, s, a); };
    auto rfn = [&](Tape& tp, NodeId s, NodeId a) { return r.reward(tp, s, a); };
    auto pfn = [&](Tape& tp, NodeId s) { return p.act(tp, s); };
    NodeId s0 = t.leaf(Tensor({1, 2}, {0.3, 0.9}));
    const double with_h5 = t.val(rollout_return(t, dfn, rfn, pfn, s0, 5, 0.0)).item();
    const double with_h0 = t.val(rollout_return(t, dfn, rfn, pfn, s0, 0, 0.0)).item();
    EXPECT_DOUBLE_EQ(with_h5, with_h0);
}

TEST(Rollout, GeometricSumForConstantRewardAndIdentityDynamics) {
    Tape t;
    NodeId s0 = t.leaf(Tensor({1, 2}, {1.0, 2.0}));
    NodeId ret = rollout_return(t, identity_dynamics(), constant_reward(1.0), zero_policy(1),
                                s0, 3, 0.9);
    EXPECT_NEAR(t.val(ret).item(), 3.439, 1e-12);
}

TEST(Rollout, NonFiniteStateAbortsWithStepDiagnostics) {
    TapeDynamics blow_up = [](Tape& t, NodeId s, NodeId) {
        return t.scalar_mul(s, std::numeric_limits<double>::infinity());
    };
    Tape t;
    NodeId s0 = t.leaf(Tensor({1, 2}, {1.0, 1.0}));
    try {
        rollout_return(t, blow_up, constant_reward(0.0), zero_policy(1), s0, 3, 0.9, nullptr,
                       "member 1");
        FAIL() << "expected abort";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step 1"), std::string::npos);
        EXPECT_NE(msg.find("member 1"), std::string::npos);
    }
}

TEST(Utility, TwoPointStatistics) {
    Tape t;
    RolloutConfig cfg;
    cfg.risk = 1.0;
    const auto eval =
        reduce_returns(t, {t.leaf(Tensor({1, 1}, {1.0})), t.leaf(Tensor({1, 1}, {3.0}))}, cfg);
    EXPECT_NEAR(t.val(eval.mean_vec).item(), 2.0, 1e-15);
    EXPECT_NEAR(t.val(eval.std_vec).item(), 1.0, 1e-9);
    EXPECT_NEAR(t.val(eval.utility).item(), 3.0, 1e-9);
}

TEST(Utility, IdenticalMembersCollapseToMeanRegardlessOfRisk) {
    TinyWorld w(102);
    w.ens.member(1).copy_values_from(w.ens.member(0));
    const Tensor starts({2, 2}, {0.5, -0.5, 1.0, 0.2});
    RolloutConfig cfg;
    cfg.horizon = 4;
    cfg.risk = 0.0;
    const double base = w.utility_value(starts, cfg);
    for (double c : {1.0, -1.0, 0.5}) {
        cfg.risk = c;
        // sigma collapses to sqrt(eps); U moves by at most |c|*sqrt(eps)
        EXPECT_NEAR(w.utility_value(starts, cfg), base, 2e-6);
    }
}

TEST(Utility, RiskZeroIsExactlyTheMeanOverStarts) {
    TinyWorld w(103);
    const Tensor starts({3, 2}, {0.5, -0.5, 1.0, 0.2, -0.8, 0.1});
    RolloutConfig cfg;
    cfg.horizon = 3;
    cfg.risk = 0.0;

    Tape t;
    std::vector<TapeDynamics> members;
    for (int k = 0; k < w.ens.size(); ++k) {
        auto dyn = w.ens.to_tape(t, k, false);
        members.push_back([dyn](Tape& tp, NodeId s, NodeId a) { return dyn.next_state(tp, s, a); });
    }
    auto r = w.rwd.to_tape(t, false);
    auto p = w.pol.to_tape(t, false);
    const auto eval = evaluate_utility(
        t, members, [r](Tape& tp, NodeId s, NodeId a) { return r.reward(tp, s, a); },
        [p](Tape& tp, NodeId s) { return p.act(tp, s); }, starts, cfg);
    const Tensor& mu = t.val(eval.mean_vec);
    double want = 0;
    for (int i = 0; i < 3; ++i) want += mu[i];
    want /= 3.0;
    EXPECT_NEAR(t.val(eval.utility).item(), want, 1e-15);
}

TEST(Utility, SymmetricInRiskAroundTheMean) {
    TinyWorld w(104);
    const Tensor starts({2, 2}, {0.3, 0.4, -0.2, 0.9});
    RolloutConfig cfg;
    cfg.horizon = 5;
    cfg.risk = 0.0;
    const double mu = w.utility_value(starts, cfg);
    double prev = -1e300;
    for (double c : {0.25, 0.5, 1.0, 2.0}) {
        cfg.risk = c;
        const double up = w.utility_value(starts, cfg);
        cfg.risk = -c;
        const double dn = w.utility_value(starts, cfg);
        EXPECT_NEAR(up + dn, 2.0 * mu, 1e-10);
        EXPECT_GT(up, prev);  // strictly increasing in c while sigma > 0
        prev = up;
    }
}

TEST(Utility, NeedsAtLeastTwoMembers) {
    Tape t;
    RolloutConfig cfg;
    EXPECT_THROW(reduce_returns(t, {t.leaf(Tensor({1, 1}, {1.0}))}, cfg),
                 std::invalid_argument);
}

TEST(Utility, PerturbingOneMemberChangesOnlyItsReturn) {
    TinyWorld w(105, 3);
    const Tensor starts({2, 2}, {0.5, -0.5, 0.1, 0.8});
    RolloutConfig cfg;
    cfg.horizon = 4;

    auto returns_of = [&] {
        const auto ug = policy_utility_gradient(w.ens, w.rwd, w.pol, starts, cfg);
        return ug.returns;
    };
    const Tensor before = returns_of();
    Tensor& wt = w.ens.member(1)[weight_name(0)];
    wt[0] += 0.05;
    const Tensor after = returns_of();
    for (int n = 0; n < 2; ++n) {
        EXPECT_EQ(before.at(0, n), after.at(0, n));
        EXPECT_NE(before.at(1, n), after.at(1, n));
        EXPECT_EQ(before.at(2, n), after.at(2, n));
    }
}

TEST(Utility, PolicyGradientMatchesFiniteDifferences) {
    // B=2, H=3, state dim 2, one hidden layer of 4
    TinyWorld w(106);
    const Tensor starts({2, 2}, {0.4, -0.3, -0.6, 0.5});
    RolloutConfig cfg;
    cfg.horizon = 3;
    cfg.risk = 0.5;

    const auto ug = policy_utility_gradient(w.ens, w.rwd, w.pol, starts, cfg);
    std::vector<double> analytic;
    for (std::size_t e = 0; e < ug.policy_grad.size(); ++e) {
        const Tensor& g = ug.policy_grad.tensor(e);
        analytic.insert(analytic.end(), g.data(), g.data() + g.numel());
    }

    const auto theta0 = w.pol.params().flatten();
    auto f = [&](const std::vector<double>& v) {
        w.pol.params().unflatten(v);
        const double u = w.utility_value(starts, cfg);
        w.pol.params().unflatten(theta0);
        return u;
    };
    EXPECT_LT(ts::max_rel_error(analytic, ts::central_diff(f, theta0)), 1e-4);
}

TEST(Utility, ParallelMemberTapesMatchSingleTape) {
    TinyWorld w(107, 4);
    const Tensor starts({3, 2}, {0.5, -0.5, 1.0, 0.2, -0.8, 0.1});
    RolloutConfig cfg;
    cfg.horizon = 6;
    cfg.risk = 0.7;

    cfg.parallel_members = false;
    const auto single = policy_utility_gradient(w.ens, w.rwd, w.pol, starts, cfg);
    cfg.parallel_members = true;
    const auto multi = policy_utility_gradient(w.ens, w.rwd, w.pol, starts, cfg);

    EXPECT_EQ(single.utility, multi.utility);
    for (std::size_t k = 0; k < 4; ++k)
        for (int n = 0; n < 3; ++n)
            EXPECT_EQ(single.returns.at(static_cast<int>(k), n),
                      multi.returns.at(static_cast<int>(k), n));
    for (std::size_t e = 0; e < single.policy_grad.size(); ++e) {
        const Tensor& a = single.policy_grad.tensor(e);
        const Tensor& b = multi.policy_grad.tensor(e);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double scale = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-6});
            EXPECT_LT(std::fabs(a[i] - b[i]) / scale, 1e-12);
        }
    }
}

TEST(Rollout, TruncationErrorBoundedByDiscountTail) {
    TinyWorld w(108);
    RolloutConfig cfg;
    const double gamma = 0.9;
    const int H = 6;

    // replay the rollout with plain predictions to collect rewards
    Tensor s = Tensor::vector({0.7, -0.2});
    double max_abs_reward = 0.0;
    std::vector<double> rewards;
    for (int step = 0; step <= H + 1; ++step) {
        const Tensor a = w.pol.act(s);
        const double r = w.rwd.predict(s, a);
        rewards.push_back(r);
        max_abs_reward = std::max(max_abs_reward, std::fabs(r));
        s = w.ens.predict_next(0, s, a);
    }
    auto ret = [&](int horizon) {
        double acc = 0, g = 1;
        for (int t = 0; t <= horizon; ++t) {
            acc += g * rewards[static_cast<std::size_t>(t)];
            g *= gamma;
        }
        return acc;
    };
    EXPECT_LE(std::fabs(ret(H) - ret(H + 1)),
              std::pow(gamma, H + 1) * max_abs_reward + 1e-15);

    // and the taped rollout agrees with the plain replay
    Tape t;
    auto dyn = w.ens.to_tape(t, 0, false);
    auto rw = w.rwd.to_tape(t, false);
    auto p = w.pol.to_tape(t, false);
    NodeId ret_node = rollout_return(
        t, [&](Tape& tp, NodeId ss, NodeId aa) { return dyn.next_state(tp, ss, aa); },
        [&](Tape& tp, NodeId ss, NodeId aa) { return rw.reward(tp, ss, aa); },
        [&](Tape& tp, NodeId ss) { return p.act(tp, ss); },
        t.leaf(Tensor({1, 2}, {0.7, -0.2})), H, gamma);
    EXPECT_NEAR(t.val(ret_node).item(), ret(H), 1e-12);
}

TEST(ValueOracle, MatchesHandComputedLinearTrajectory) {
    Linear2dEnv env;
    // linear feedback a = k0*p + k1*v
    const double k0 = -0.4, k1 = -0.7;
    auto policy = [&](const Tensor& s) { return Tensor::vector({k0 * s[0] + k1 * s[1]}); };
    const Tensor s0 = Tensor::vector({0.8, -0.3});
    const int H = 12;
    const double gamma = 0.95;

    double p = s0[0], v = s0[1], want = 0, g = 1;
    for (int t = 0; t <= H; ++t) {
        const double a = k0 * p + k1 * v;
        want += g * -(Linear2dEnv::kPosCost * p * p + Linear2dEnv::kVelCost * v * v +
                      Linear2dEnv::kActCost * a * a);
        const double np = p + Linear2dEnv::kDt * v, nv = v + Linear2dEnv::kDt * a;
        p = np;
        v = nv;
        g *= gamma;
    }
    EXPECT_NEAR(value_oracle(env, policy, s0, H, gamma), want, 1e-12);
    EXPECT_NEAR(value_oracle(env, policy, s0, 0, gamma),
                env.oracle_reward(s0, policy(s0)), 1e-15);
}

TEST(ValueOracle, PerfectModelRolloutMatchesOracle) {
    // true dynamics and reward in every member: the tape estimator must
    // reproduce the oracle value
    for (const char* name : {"pendulum", "linear2d"}) {
        auto env = make_env(name);
        Rng rng(200);
        Policy pol(env->spec().state_dim, env->spec().action_dim, {8}, Activation::Tanh,
                   env->spec().action_low, env->spec().action_high, rng);
        for (int trial = 0; trial < 10; ++trial) {
            const Tensor s0 = env->reset(rng);
            const double want =
                value_oracle(*env, [&](const Tensor& s) { return pol.act(s); }, s0, 8, 0.95);
            Tape t;
            auto p = t_policy(t, pol);
            NodeId ret = rollout_return(t, oracle_dynamics_on_tape(*env),
                                        oracle_reward_on_tape(*env), p,
                                        t.leaf(reshape_row(s0)), 8, 0.95);
            EXPECT_NEAR(t.val(ret).item(), want, 1e-9) << name << " trial " << trial;
        }
    }
}
