#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "umbra/mlp.hpp"
#include "umbra/param_set.hpp"
#include "umbra/tape.hpp"

namespace umbra {

/// Deterministic policy network. With finite action bounds the output is
/// tanh-squashed into [low, high] per dimension; with unbounded actions the
/// output is the raw affine head.
class Policy {
public:
    Policy(int state_dim, int action_dim, std::vector<int> hidden, Activation act, Tensor low,
           Tensor high, Rng& init_rng, double output_init_scale = 0.05)
        : low_(std::move(low)), high_(std::move(high)) {
        if (low_.numel() != static_cast<std::size_t>(action_dim) ||
            high_.numel() != static_cast<std::size_t>(action_dim))
            throw std::invalid_argument("Policy: bounds must have action_dim entries");
        arch_.sizes.push_back(state_dim);
        for (int h : hidden) arch_.sizes.push_back(h);
        arch_.sizes.push_back(action_dim);
        arch_.activation = act;
        theta_ = init_mlp_params(arch_, init_rng);
        // start near the center of the action range so the squash stays in
        // its responsive region early in training
        if (arch_.layers() > 0 && output_init_scale != 1.0) {
            Tensor& w_out = theta_[weight_name(arch_.layers() - 1)];
            for (std::size_t i = 0; i < w_out.numel(); ++i) w_out[i] *= output_init_scale;
        }
        squash_ = low_.all_finite() && high_.all_finite();
        center_ = Tensor({action_dim});
        half_range_ = Tensor({action_dim});
        if (squash_) {
            for (int i = 0; i < action_dim; ++i) {
                center_[i] = 0.5 * (high_[i] + low_[i]);
                half_range_[i] = 0.5 * (high_[i] - low_[i]);
            }
        }
    }

    const MlpSpec& arch() const { return arch_; }
    ParamSet& params() { return theta_; }
    const ParamSet& params() const { return theta_; }
    bool squashed() const { return squash_; }
    int state_dim() const { return arch_.input_dim(); }
    int action_dim() const { return arch_.output_dim(); }

    /// Deterministic action for one state (or a batch of states).
    Tensor act(const Tensor& s) const {
        Tensor y = mlp_forward(arch_, theta_, s);
        if (!squash_) return y;
        for (int r = 0; r < y.rows(); ++r)
            for (int c = 0; c < y.cols(); ++c)
                y.at(r, c) = std::tanh(y.at(r, c)) * half_range_[c] + center_[c];
        return y;
    }

    struct OnTape {
        MlpOnTape net;
        NodeId half_range = -1;
        NodeId center = -1;
        bool squash = false;

        NodeId act(Tape& t, NodeId s) const {
            NodeId y = mlp_forward(t, net, s);
            if (!squash) return y;
            return t.bias_add(t.scale_cols(t.tanh(y), half_range), center);
        }
    };

    OnTape to_tape(Tape& t, bool requires_grad) const {
        OnTape p;
        p.net = mlp_to_tape(t, arch_, theta_, requires_grad);
        p.squash = squash_;
        if (squash_) {
            p.half_range = t.constant(half_range_);
            p.center = t.constant(center_);
        }
        return p;
    }

    ParamSet grads_from(const Tape& t, const OnTape& p) const { return mlp_grads(t, p.net); }

    /// Gradient-ascent step with global l2-norm clipping. Returns false (and
    /// leaves the parameters untouched) when the gradient is non-finite.
    bool improve(const ParamSet& grad, double lr, double max_norm) {
        double sq = 0.0;
        for (std::size_t e = 0; e < grad.size(); ++e) {
            const Tensor& g = grad.tensor(e);
            for (std::size_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
        }
        if (!std::isfinite(sq)) return false;
        if (sq == 0.0) return true;
        const double norm = std::sqrt(sq);
        const double scale = (max_norm > 0.0 && norm > max_norm) ? max_norm / norm : 1.0;
        for (std::size_t e = 0; e < theta_.size(); ++e) {
            Tensor& p = theta_.tensor(e);
            const Tensor& g = grad.tensor(e);
            for (std::size_t i = 0; i < p.numel(); ++i) p[i] += lr * scale * g[i];
        }
        return true;
    }

    void save(const std::string& path) const { theta_.save(path); }

    void load(const std::string& path) {
        const ParamSet loaded = ParamSet::load(path);
        theta_.copy_values_from(loaded);
    }

private:
    MlpSpec arch_;
    ParamSet theta_;
    Tensor low_, high_;
    Tensor center_, half_range_;
    bool squash_ = false;
};

/// clip(g, max_norm): identity when ||g|| <= max_norm, else rescaled to norm
/// max_norm. Exposed for property tests; improve() applies the same rule.
inline std::vector<double> clip_by_global_norm(std::vector<double> g, double max_norm) {
    double sq = 0.0;
    for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& v : g) v *= scale;
    }
    return g;
}

}  // namespace umbra
