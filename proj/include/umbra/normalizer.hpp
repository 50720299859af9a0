#pragma once

#include <cmath>
#include <cstdint>

#include "umbra/tape.hpp"
#include "umbra/tensor.hpp"

namespace umbra {

/// Running per-dimension mean/variance (Welford). With fewer than two
/// observations, normalize() is the identity. Dimensions with ~zero variance
/// are passed through unscaled.
class RunningNormalizer {
public:
    explicit RunningNormalizer(int dim)
        : count_(0), mean_({dim}), m2_({dim}) {}

    int dim() const { return mean_.cols(); }
    std::int64_t count() const { return count_; }

    void update(const Tensor& x) {
        if (x.numel() != static_cast<std::size_t>(dim()))
            throw std::invalid_argument("RunningNormalizer: sample size " +
                                        std::to_string(x.numel()) + " != dim " +
                                        std::to_string(dim()));
        ++count_;
        for (int i = 0; i < dim(); ++i) {
            const double delta = x[i] - mean_[i];
            mean_[i] += delta / static_cast<double>(count_);
            m2_[i] += delta * (x[i] - mean_[i]);
        }
    }

    /// Shift applied before scaling: -mean (zeros below two samples).
    Tensor shift() const {
        Tensor s({dim()});
        if (count_ >= 2)
            for (int i = 0; i < dim(); ++i) s[i] = -mean_[i];
        return s;
    }

    /// Per-dimension 1/std (ones below two samples or for constant dims).
    Tensor inv_scale() const {
        Tensor v = Tensor::full({dim()}, 1.0);
        if (count_ >= 2) {
            for (int i = 0; i < dim(); ++i) {
                const double sd = std::sqrt(m2_[i] / static_cast<double>(count_));
                if (sd > 1e-8) v[i] = 1.0 / sd;
            }
        }
        return v;
    }

    Tensor normalize(const Tensor& x) const {
        const Tensor s = shift(), v = inv_scale();
        Tensor y(x.shape());
        for (int r = 0; r < x.rows(); ++r)
            for (int c = 0; c < x.cols(); ++c) y.at(r, c) = (x.at(r, c) + s[c]) * v[c];
        return y;
    }

    Tensor denormalize(const Tensor& y) const {
        const Tensor s = shift(), v = inv_scale();
        Tensor x(y.shape());
        for (int r = 0; r < y.rows(); ++r)
            for (int c = 0; c < y.cols(); ++c) x.at(r, c) = y.at(r, c) / v[c] - s[c];
        return x;
    }

    /// Records the affine normalization on a tape with the current (frozen)
    /// statistics as constants. Same arithmetic as normalize().
    NodeId apply_on_tape(Tape& tape, NodeId x) const {
        NodeId s = tape.constant(shift());
        NodeId v = tape.constant(inv_scale());
        return tape.scale_cols(tape.bias_add(x, s), v);
    }

private:
    std::int64_t count_;
    Tensor mean_;
    Tensor m2_;
};

}  // namespace umbra
