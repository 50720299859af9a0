#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "umbra/env.hpp"
#include "umbra/envs/linear2d.hpp"
#include "umbra/envs/pendulum.hpp"

namespace umbra {

inline std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "pendulum") return std::make_unique<PendulumEnv>();
    if (name == "linear2d") return std::make_unique<Linear2dEnv>();
    throw std::invalid_argument("unknown environment '" + name +
                                "' (available: pendulum, linear2d)");
}

}  // namespace umbra
