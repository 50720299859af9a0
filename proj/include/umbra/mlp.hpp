#pragma once

#include <string>
#include <vector>

#include "umbra/param_set.hpp"
#include "umbra/rng.hpp"
#include "umbra/tape.hpp"

namespace umbra {

enum class Activation { Tanh, Relu };

inline const char* activation_name(Activation a) {
    return a == Activation::Tanh ? "tanh" : "relu";
}

/// Fully connected stack: sizes = [in, hidden..., out]. Hidden layers get the
/// activation; the output layer is affine.
struct MlpSpec {
    std::vector<int> sizes;
    Activation activation = Activation::Tanh;

    int layers() const { return static_cast<int>(sizes.size()) - 1; }
    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }
};

inline std::string weight_name(int layer) { return "W" + std::to_string(layer); }
inline std::string bias_name(int layer) { return "b" + std::to_string(layer); }

/// Glorot-uniform weights, zero biases. Draw order is fixed (layer by layer,
/// row-major), so a seed fully determines the parameters.
inline ParamSet init_mlp_params(const MlpSpec& spec, Rng& rng) {
    if (spec.sizes.size() < 2) throw std::invalid_argument("MlpSpec: needs at least 2 sizes");
    ParamSet ps;
    for (int l = 0; l < spec.layers(); ++l) {
        const int fan_in = spec.sizes[l], fan_out = spec.sizes[l + 1];
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        Tensor w({fan_in, fan_out});
        for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-limit, limit);
        ps.add(weight_name(l), std::move(w));
        ps.add(bias_name(l), Tensor({fan_out}));
    }
    return ps;
}

inline void check_mlp_params(const MlpSpec& spec, const ParamSet& ps) {
    for (int l = 0; l < spec.layers(); ++l) {
        const std::vector<int> w_shape{spec.sizes[l], spec.sizes[l + 1]};
        const std::vector<int> b_shape{spec.sizes[l + 1]};
        if (!ps.has(weight_name(l)) || ps[weight_name(l)].shape() != w_shape ||
            !ps.has(bias_name(l)) || ps[bias_name(l)].shape() != b_shape) {
            throw std::invalid_argument("mlp: params do not match arch at layer " +
                                        std::to_string(l));
        }
    }
}

/// Forward pass without a tape. Input (in,) or (N,in); output has the same
/// rank. Uses the same kernels and op order as the tape path, so the values
/// agree bit-exactly.
inline Tensor mlp_forward(const MlpSpec& spec, const ParamSet& ps, const Tensor& input) {
    check_mlp_params(spec, ps);
    if (input.cols() != spec.input_dim())
        throw std::invalid_argument("mlp: input shape " + input.shape_string() +
                                    " does not match input dim " +
                                    std::to_string(spec.input_dim()));
    const int n = input.rows();
    Tensor h = input;
    for (int l = 0; l < spec.layers(); ++l) {
        const Tensor& W = ps[weight_name(l)];
        const Tensor& b = ps[bias_name(l)];
        const int m = spec.sizes[l + 1];
        Tensor out(input.rank() == 2 ? std::vector<int>{n, m} : std::vector<int>{m});
        detail::matmul_acc(h.data(), W.data(), out.data(), n, spec.sizes[l], m);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < m; ++c) out.at(r, c) += b[c];
        if (l + 1 < spec.layers()) {
            for (std::size_t i = 0; i < out.numel(); ++i)
                out[i] = spec.activation == Activation::Tanh ? std::tanh(out[i])
                                                             : (out[i] > 0.0 ? out[i] : 0.0);
        }
        h = std::move(out);
    }
    return h;
}

/// The node handles of one network's parameters on a tape.
struct MlpOnTape {
    MlpSpec spec;
    std::vector<NodeId> weights;
    std::vector<NodeId> biases;
};

inline MlpOnTape mlp_to_tape(Tape& tape, const MlpSpec& spec, const ParamSet& ps,
                             bool requires_grad) {
    check_mlp_params(spec, ps);
    MlpOnTape m{spec, {}, {}};
    for (int l = 0; l < spec.layers(); ++l) {
        m.weights.push_back(tape.leaf(ps[weight_name(l)], requires_grad));
        m.biases.push_back(tape.leaf(ps[bias_name(l)], requires_grad));
    }
    return m;
}

inline NodeId mlp_forward(Tape& tape, const MlpOnTape& m, NodeId input) {
    NodeId h = input;
    for (int l = 0; l < m.spec.layers(); ++l) {
        h = tape.bias_add(tape.matmul(h, m.weights[l]), m.biases[l]);
        if (l + 1 < m.spec.layers())
            h = m.spec.activation == Activation::Tanh ? tape.tanh(h) : tape.relu(h);
    }
    return h;
}

/// Reads gradients for every parameter of `m`, in ParamSet order.
inline ParamSet mlp_grads(const Tape& tape, const MlpOnTape& m) {
    ParamSet g;
    for (int l = 0; l < m.spec.layers(); ++l) {
        g.add(weight_name(l), tape.grad(m.weights[l]));
        g.add(bias_name(l), tape.grad(m.biases[l]));
    }
    return g;
}

}  // namespace umbra
