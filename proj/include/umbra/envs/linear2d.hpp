#pragma once

#include <limits>
#include <stdexcept>

#include "umbra/env.hpp"

namespace umbra {

/// Double-integrator point mass on a line: state (position, velocity),
/// action is an unbounded acceleration, reward is a negative quadratic.
/// Every quantity has a closed form, which is what this environment is for.
class Linear2dEnv final : public Env {
public:
    static constexpr double kDt = 0.05;
    static constexpr int kHorizon = 100;
    static constexpr double kPosCost = 1.0;
    static constexpr double kVelCost = 0.1;
    static constexpr double kActCost = 0.01;

    Linear2dEnv() {
        spec_.name = "linear2d";
        spec_.state_dim = 2;
        spec_.action_dim = 1;
        spec_.horizon = kHorizon;
        const double inf = std::numeric_limits<double>::infinity();
        spec_.action_low = Tensor::vector({-inf});
        spec_.action_high = Tensor::vector({inf});
        spec_.dt = kDt;
    }

    const EnvSpec& spec() const override { return spec_; }

    Tensor reset(Rng& rng) override {
        pos_ = rng.uniform(-1.0, 1.0);
        vel_ = rng.uniform(-1.0, 1.0);
        steps_ = 0;
        return observation();
    }

    StepResult step(const Tensor& action) override {
        if (!action.all_finite())
            throw std::invalid_argument("linear2d: non-finite action");
        StepResult out;
        out.reward = reward_fn(pos_, vel_, action[0]);
        const double new_pos = pos_ + kDt * vel_;
        const double new_vel = vel_ + kDt * action[0];
        pos_ = new_pos;
        vel_ = new_vel;
        ++steps_;
        out.obs = observation();
        out.done = steps_ >= kHorizon;
        return out;
    }

    Tensor observation() const override { return Tensor::vector({pos_, vel_}); }

    Tensor oracle_dynamics(const Tensor& obs, const Tensor& action) const override {
        return Tensor::vector({obs[0] + kDt * obs[1], obs[1] + kDt * action[0]});
    }

    double oracle_reward(const Tensor& obs, const Tensor& action) const override {
        return reward_fn(obs[0], obs[1], action[0]);
    }

    std::unique_ptr<Env> clone() const override { return std::make_unique<Linear2dEnv>(*this); }

    /// Transition matrices: s' = A s + B a.
    static Tensor a_matrix() { return Tensor({2, 2}, {1.0, kDt, 0.0, 1.0}); }
    static Tensor b_matrix() { return Tensor({2, 1}, {0.0, kDt}); }
    /// Cost matrices: reward = -(s'Qs + a'Ra).
    static Tensor q_matrix() { return Tensor({2, 2}, {kPosCost, 0.0, 0.0, kVelCost}); }
    static Tensor r_matrix() { return Tensor({1, 1}, {kActCost}); }

    void set_state(double pos, double vel) {
        pos_ = pos;
        vel_ = vel;
        steps_ = 0;
    }

private:
    static double reward_fn(double p, double v, double a) {
        return -(kPosCost * p * p + kVelCost * v * v + kActCost * a * a);
    }

    EnvSpec spec_;
    double pos_ = 0.0;
    double vel_ = 0.0;
    int steps_ = 0;
};

}  // namespace umbra
