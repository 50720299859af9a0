#pragma once

#include <memory>
#include <string>

#include "umbra/rng.hpp"
#include "umbra/tensor.hpp"

namespace umbra {

struct EnvSpec {
    std::string name;
    int state_dim = 0;
    int action_dim = 0;
    int horizon = 0;       // task horizon T (episode length)
    Tensor action_low;     // per-dimension; +-inf means unbounded
    Tensor action_high;
    double dt = 0.0;

    bool bounded_actions() const {
        return action_low.all_finite() && action_high.all_finite();
    }
};

struct StepResult {
    Tensor obs;
    double reward = 0.0;
    bool done = false;
};

/// A desk-scale environment exposing its true transition and reward
/// functions for measurement. The oracle methods are pure: they never touch
/// the live episode state.
class Env {
public:
    virtual ~Env() = default;
    virtual const EnvSpec& spec() const = 0;
    virtual Tensor reset(Rng& rng) = 0;
    virtual StepResult step(const Tensor& action) = 0;
    virtual Tensor observation() const = 0;
    virtual Tensor oracle_dynamics(const Tensor& obs, const Tensor& action) const = 0;
    virtual double oracle_reward(const Tensor& obs, const Tensor& action) const = 0;
    virtual std::unique_ptr<Env> clone() const = 0;
};

}  // namespace umbra
