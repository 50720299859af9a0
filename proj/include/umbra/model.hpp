#pragma once

#include <set>
#include <stdexcept>
#include <vector>

#include "umbra/mlp.hpp"
#include "umbra/normalizer.hpp"
#include "umbra/param_set.hpp"
#include "umbra/replay.hpp"
#include "umbra/rng.hpp"
#include "umbra/tape.hpp"

namespace umbra {

/// One gradient-descent step on a ParamSet, with optional momentum.
/// `velocity` must be empty or flat_size()-long; it is created on first use.
inline void sgd_step(ParamSet& params, const ParamSet& grads, double lr, double momentum,
                     std::vector<double>& velocity) {
    std::size_t off = 0;
    if (momentum > 0.0 && velocity.empty()) velocity.assign(params.flat_size(), 0.0);
    for (std::size_t e = 0; e < params.size(); ++e) {
        Tensor& p = params.tensor(e);
        const Tensor& g = grads.tensor(e);
        for (std::size_t i = 0; i < p.numel(); ++i, ++off) {
            if (momentum > 0.0) {
                velocity[off] = momentum * velocity[off] - lr * g[i];
                p[i] += velocity[off];
            } else {
                p[i] -= lr * g[i];
            }
        }
    }
}

struct MemberUpdate {
    double loss = 0.0;                  // final minibatch loss
    std::size_t distinct_indices = 0;   // distinct global examples consumed
    bool skipped = false;               // buffer had no sampleable entries
};

/// A learned one-step model on a tape: predicts s' = s + net(normalize(s,a)).
struct DynamicsOnTape {
    MlpOnTape net;
    NodeId shift = -1;
    NodeId scale = -1;

    NodeId next_state(Tape& t, NodeId s, NodeId a) const {
        NodeId x = t.concat_cols(s, a);
        NodeId xn = t.scale_cols(t.bias_add(x, shift), scale);
        return t.add(s, mlp_forward(t, net, xn));
    }
};

struct RewardOnTape {
    MlpOnTape net;
    NodeId shift = -1;
    NodeId scale = -1;

    /// (N,1) reward predictions for a batch of (s, a).
    NodeId reward(Tape& t, NodeId s, NodeId a) const {
        NodeId x = t.concat_cols(s, a);
        NodeId xn = t.scale_cols(t.bias_add(x, shift), scale);
        return mlp_forward(t, net, xn);
    }
};

/// B deterministic one-step approximators, each trained on its own
/// bootstrapped dataset. Members predict the state residual.
class DynamicsEnsemble {
public:
    DynamicsEnsemble(int members, int state_dim, int action_dim, std::vector<int> hidden,
                     Activation act, Rng& init_rng)
        : state_dim_(state_dim), action_dim_(action_dim), norm_(state_dim + action_dim) {
        if (members < 2)
            throw std::invalid_argument("DynamicsEnsemble: need at least 2 members, got " +
                                        std::to_string(members));
        arch_.sizes.push_back(state_dim + action_dim);
        for (int h : hidden) arch_.sizes.push_back(h);
        arch_.sizes.push_back(state_dim);
        arch_.activation = act;
        for (int k = 0; k < members; ++k) members_.push_back(init_mlp_params(arch_, init_rng));
        velocity_.resize(members_.size());
    }

    int size() const { return static_cast<int>(members_.size()); }
    int state_dim() const { return state_dim_; }
    int action_dim() const { return action_dim_; }
    const MlpSpec& arch() const { return arch_; }

    ParamSet& member(int k) { return members_.at(static_cast<std::size_t>(k)); }
    const ParamSet& member(int k) const { return members_.at(static_cast<std::size_t>(k)); }

    RunningNormalizer& normalizer() { return norm_; }
    const RunningNormalizer& normalizer() const { return norm_; }

    void observe(const Tensor& s, const Tensor& a) { norm_.update(joint(s, a)); }

    /// Plain next-state prediction by member k (no tape).
    Tensor predict_next(int k, const Tensor& s, const Tensor& a) const {
        check_member(k);
        const Tensor delta = mlp_forward(arch_, members_[k], norm_.normalize(joint(s, a)));
        Tensor next(s.shape());
        for (std::size_t i = 0; i < next.numel(); ++i) next[i] = s[i] + delta[i];
        return next;
    }

    DynamicsOnTape to_tape(Tape& t, int k, bool requires_grad) const {
        check_member(k);
        DynamicsOnTape d;
        d.net = mlp_to_tape(t, arch_, members_[k], requires_grad);
        d.shift = t.constant(norm_.shift());
        d.scale = t.constant(norm_.inv_scale());
        return d;
    }

    /// Mean over state dimensions of the member-wise standard deviation of
    /// the next-state predictions.
    double ensemble_disagreement(const Tensor& s, const Tensor& a) const {
        std::vector<Tensor> preds;
        preds.reserve(members_.size());
        for (int k = 0; k < size(); ++k) preds.push_back(predict_next(k, s, a));
        double acc = 0.0;
        for (int d = 0; d < state_dim_; ++d) {
            double mean = 0.0;
            for (const Tensor& p : preds) mean += p[d];
            mean /= size();
            double var = 0.0;
            for (const Tensor& p : preds) var += (p[d] - mean) * (p[d] - mean);
            var /= size();
            acc += std::sqrt(var);
        }
        return acc / state_dim_;
    }

    /// For each member: `steps` SGD steps on the mean squared residual error
    /// over minibatches from that member's own bootstrap buffer. A member
    /// whose buffer is empty is skipped and reported as such.
    std::vector<MemberUpdate> update(const ReplayStore& store, int minibatch, int steps,
                                     double lr, double momentum, WeightScheme scheme, Rng& rng) {
        std::vector<MemberUpdate> reports(members_.size());
        for (int k = 0; k < size(); ++k) {
            MemberUpdate& rep = reports[static_cast<std::size_t>(k)];
            if (!store.buffer_nonempty(k)) {
                rep.skipped = true;
                continue;
            }
            std::set<std::int64_t> seen;
            for (int s = 0; s < steps; ++s) {
                const auto idx = store.sample_buffer(k, scheme, minibatch, rng);
                for (auto i : idx) {
                    if (store.count(k, i) == 0)
                        throw std::logic_error("DynamicsEnsemble: sampled zero-count example");
                    seen.insert(i);
                }
                rep.loss = train_step(k, store, idx, lr, momentum);
            }
            rep.distinct_indices = seen.size();
        }
        return reports;
    }

private:
    void check_member(int k) const {
        if (k < 0 || k >= size())
            throw std::out_of_range("DynamicsEnsemble: member " + std::to_string(k) +
                                    " of " + std::to_string(size()));
    }

    Tensor joint(const Tensor& s, const Tensor& a) const {
        Tensor x({state_dim_ + action_dim_});
        for (int i = 0; i < state_dim_; ++i) x[i] = s[i];
        for (int i = 0; i < action_dim_; ++i) x[state_dim_ + i] = a[i];
        return x;
    }

    double train_step(int k, const ReplayStore& store, const std::vector<std::int64_t>& idx,
                      double lr, double momentum) {
        const int m = static_cast<int>(idx.size());
        Tensor x({m, state_dim_ + action_dim_});
        Tensor y({m, state_dim_});
        for (int r = 0; r < m; ++r) {
            const Transition& tr = store.transition(idx[static_cast<std::size_t>(r)]);
            for (int c = 0; c < state_dim_; ++c) x.at(r, c) = tr.s[c];
            for (int c = 0; c < action_dim_; ++c) x.at(r, state_dim_ + c) = tr.a[c];
            for (int c = 0; c < state_dim_; ++c) y.at(r, c) = tr.s2[c] - tr.s[c];
        }
        Tape t;
        auto net = mlp_to_tape(t, arch_, members_[k], true);
        NodeId xn = t.scale_cols(t.bias_add(t.leaf(x), t.constant(norm_.shift())),
                                 t.constant(norm_.inv_scale()));
        NodeId err = t.sub(mlp_forward(t, net, xn), t.leaf(std::move(y)));
        NodeId loss = t.scalar_mul(t.sum(t.square(err)), 1.0 / m);
        t.backward(loss);
        sgd_step(members_[k], mlp_grads(t, net), lr, momentum, velocity_[k]);
        return t.val(loss).item();
    }

    int state_dim_;
    int action_dim_;
    MlpSpec arch_;
    std::vector<ParamSet> members_;
    RunningNormalizer norm_;
    std::vector<std::vector<double>> velocity_;
};

/// Deterministic scalar reward approximator trained on the master dataset.
class RewardModel {
public:
    RewardModel(int state_dim, int action_dim, std::vector<int> hidden, Activation act,
                Rng& init_rng)
        : state_dim_(state_dim), action_dim_(action_dim), norm_(state_dim + action_dim) {
        arch_.sizes.push_back(state_dim + action_dim);
        for (int h : hidden) arch_.sizes.push_back(h);
        arch_.sizes.push_back(1);
        arch_.activation = act;
        params_ = init_mlp_params(arch_, init_rng);
    }

    const MlpSpec& arch() const { return arch_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    RunningNormalizer& normalizer() { return norm_; }

    void observe(const Tensor& s, const Tensor& a) { norm_.update(joint(s, a)); }

    double predict(const Tensor& s, const Tensor& a) const {
        return mlp_forward(arch_, params_, norm_.normalize(joint(s, a))).item();
    }

    RewardOnTape to_tape(Tape& t, bool requires_grad) const {
        RewardOnTape r;
        r.net = mlp_to_tape(t, arch_, params_, requires_grad);
        r.shift = t.constant(norm_.shift());
        r.scale = t.constant(norm_.inv_scale());
        return r;
    }

    MemberUpdate update(const ReplayStore& store, int minibatch, int steps, double lr,
                        double momentum, WeightScheme scheme, Rng& rng) {
        MemberUpdate rep;
        if (store.empty()) {
            rep.skipped = true;
            return rep;
        }
        std::set<std::int64_t> seen;
        for (int s = 0; s < steps; ++s) {
            const auto idx = store.sample_master(scheme, minibatch, rng);
            seen.insert(idx.begin(), idx.end());
            rep.loss = train_step(store, idx, lr, momentum);
        }
        rep.distinct_indices = seen.size();
        return rep;
    }

private:
    Tensor joint(const Tensor& s, const Tensor& a) const {
        Tensor x({state_dim_ + action_dim_});
        for (int i = 0; i < state_dim_; ++i) x[i] = s[i];
        for (int i = 0; i < action_dim_; ++i) x[state_dim_ + i] = a[i];
        return x;
    }

    double train_step(const ReplayStore& store, const std::vector<std::int64_t>& idx, double lr,
                      double momentum) {
        const int m = static_cast<int>(idx.size());
        Tensor x({m, state_dim_ + action_dim_});
        Tensor y({m, 1});
        for (int r = 0; r < m; ++r) {
            const Transition& tr = store.transition(idx[static_cast<std::size_t>(r)]);
            for (int c = 0; c < state_dim_; ++c) x.at(r, c) = tr.s[c];
            for (int c = 0; c < action_dim_; ++c) x.at(r, state_dim_ + c) = tr.a[c];
            y.at(r, 0) = tr.r;
        }
        Tape t;
        auto net = mlp_to_tape(t, arch_, params_, true);
        NodeId xn = t.scale_cols(t.bias_add(t.leaf(x), t.constant(norm_.shift())),
                                 t.constant(norm_.inv_scale()));
        NodeId err = t.sub(mlp_forward(t, net, xn), t.leaf(std::move(y)));
        NodeId loss = t.scalar_mul(t.sum(t.square(err)), 1.0 / m);
        t.backward(loss);
        sgd_step(params_, mlp_grads(t, net), lr, momentum, velocity_);
        return t.val(loss).item();
    }

    int state_dim_;
    int action_dim_;
    MlpSpec arch_;
    ParamSet params_;
    RunningNormalizer norm_;
    std::vector<double> velocity_;
};

}  // namespace umbra
