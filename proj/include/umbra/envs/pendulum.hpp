#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "umbra/env.hpp"

namespace umbra {

/// Torque-limited pendulum swing-up. Observation is (cos th, sin th, omega);
/// the pole starts at a uniformly random angle and must be swung upright and
/// held there. Semi-implicit Euler integration.
class PendulumEnv final : public Env {
public:
    static constexpr double kGravity = 10.0;
    static constexpr double kMass = 1.0;
    static constexpr double kLength = 1.0;
    static constexpr double kDt = 0.05;
    static constexpr double kMaxTorque = 2.0;
    static constexpr double kMaxSpeed = 8.0;
    static constexpr int kHorizon = 200;

    PendulumEnv() {
        spec_.name = "pendulum";
        spec_.state_dim = 3;
        spec_.action_dim = 1;
        spec_.horizon = kHorizon;
        spec_.action_low = Tensor::vector({-kMaxTorque});
        spec_.action_high = Tensor::vector({kMaxTorque});
        spec_.dt = kDt;
    }

    const EnvSpec& spec() const override { return spec_; }

    Tensor reset(Rng& rng) override {
        theta_ = rng.uniform(-M_PI, M_PI);
        omega_ = rng.uniform(-1.0, 1.0);
        steps_ = 0;
        return observation();
    }

    StepResult step(const Tensor& action) override {
        if (!action.all_finite())
            throw std::invalid_argument("pendulum: non-finite action");
        const double u = clamp_torque(action[0]);
        StepResult out;
        out.reward = reward_fn(theta_, omega_, u);
        advance(theta_, omega_, u);
        ++steps_;
        out.obs = observation();
        out.done = steps_ >= kHorizon;
        return out;
    }

    Tensor observation() const override {
        return Tensor::vector({std::cos(theta_), std::sin(theta_), omega_});
    }

    Tensor oracle_dynamics(const Tensor& obs, const Tensor& action) const override {
        double th = std::atan2(obs[1], obs[0]);
        double om = obs[2];
        advance(th, om, clamp_torque(action[0]));
        return Tensor::vector({std::cos(th), std::sin(th), om});
    }

    double oracle_reward(const Tensor& obs, const Tensor& action) const override {
        return reward_fn(std::atan2(obs[1], obs[0]), obs[2], clamp_torque(action[0]));
    }

    std::unique_ptr<Env> clone() const override { return std::make_unique<PendulumEnv>(*this); }

    /// Wrap angle to (-pi, pi].
    static double wrap_angle(double x) {
        double y = std::remainder(x, 2.0 * M_PI);
        if (y <= -M_PI) y += 2.0 * M_PI;
        return y;
    }

    // diagnostic/test hook
    void set_state(double theta, double omega) {
        theta_ = theta;
        omega_ = omega;
        steps_ = 0;
    }
    double theta() const { return theta_; }
    double omega() const { return omega_; }
    int step_count() const { return steps_; }

private:
    static double clamp_torque(double u) {
        return std::clamp(u, -kMaxTorque, kMaxTorque);
    }

    static double reward_fn(double theta, double omega, double u) {
        const double w = wrap_angle(theta);
        return -(w * w + 0.1 * omega * omega + 0.001 * u * u);
    }

    static void advance(double& theta, double& omega, double u) {
        omega += (3.0 * kGravity / (2.0 * kLength) * std::sin(theta) +
                  3.0 / (kMass * kLength * kLength) * u) *
                 kDt;
        omega = std::clamp(omega, -kMaxSpeed, kMaxSpeed);
        theta += omega * kDt;
    }

    EnvSpec spec_;
    double theta_ = M_PI;
    double omega_ = 0.0;
    int steps_ = 0;
};

}  // namespace umbra
