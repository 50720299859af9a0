#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "umbra/binio.hpp"
#include "umbra/rng.hpp"
#include "umbra/tensor.hpp"

namespace umbra {

/// One experienced step. Stored transitions are never mutated.
struct Transition {
    Tensor s;
    Tensor a;
    Tensor s2;
    double r = 0.0;
};

enum class WeightScheme { Uniform, Linear };

/// Smallest i (1-based) with i(i+1)/2 > u, i.e. the index selected by a
/// uniform variate u in [0, t(t+1)/2) under weights w(i) = i. Closed-form
/// quadratic inversion plus an integer correction step.
inline std::int64_t linear_inverse_cdf(double u, std::int64_t t) {
    const double total = 0.5 * static_cast<double>(t) * static_cast<double>(t + 1);
    if (!(u >= 0.0) || u >= total)
        throw std::invalid_argument("linear_inverse_cdf: u=" + std::to_string(u) +
                                    " outside [0, " + std::to_string(total) + ")");
    auto prefix = [](std::int64_t i) {
        return 0.5 * static_cast<double>(i) * static_cast<double>(i + 1);
    };
    std::int64_t i = static_cast<std::int64_t>(std::floor((-1.0 + std::sqrt(1.0 + 8.0 * u)) / 2.0)) + 1;
    if (i < 1) i = 1;
    if (i > t) i = t;
    while (i > 1 && prefix(i - 1) > u) --i;
    while (i < t && prefix(i) <= u) ++i;
    return i;
}

/// Expected cumulative number of selections of example i under one draw per
/// time step from step i through t, by direct summation.
inline double expected_count_oracle(std::int64_t i, std::int64_t t, WeightScheme scheme) {
    if (i < 1 || i > t)
        throw std::invalid_argument("expected_count_oracle: need 1 <= i <= t, got i=" +
                                    std::to_string(i) + " t=" + std::to_string(t));
    double c = 0.0;
    if (scheme == WeightScheme::Uniform) {
        for (std::int64_t k = i; k <= t; ++k) c += 1.0 / static_cast<double>(k);
    } else {
        for (std::int64_t k = i; k <= t; ++k)
            c += 2.0 * static_cast<double>(i) /
                 (static_cast<double>(k) * static_cast<double>(k + 1));
    }
    return c;
}

/// The master dataset plus K bootstrapped logical datasets. Each pushed
/// transition is stored once; buffer k holds it with multiplicity z_k drawn
/// from Poisson(1) at insertion time. Global example indices are 1-based and
/// weighted w(t,i) = i under the linear scheme.
///
/// Single writer; concurrent readers are safe only between writes.
class ReplayStore {
public:
    ReplayStore(int state_dim, int action_dim, int num_buffers)
        : state_dim_(state_dim), action_dim_(action_dim),
          counts_(num_buffers), max_count_(num_buffers, 0), nonzero_(num_buffers, 0) {}

    int state_dim() const { return state_dim_; }
    int action_dim() const { return action_dim_; }
    int num_buffers() const { return static_cast<int>(counts_.size()); }

    /// Number of examples pushed so far (the insertion clock t).
    std::int64_t size() const { return static_cast<std::int64_t>(master_.size()); }
    bool empty() const { return master_.empty(); }

    bool buffer_nonempty(int k) const { return nonzero_.at(k) > 0; }

    /// Multiplicity of global example i in buffer k.
    std::uint32_t count(int k, std::int64_t i) const {
        return counts_.at(k).at(static_cast<std::size_t>(i - 1));
    }

    const Transition& transition(std::int64_t i) const {
        if (i < 1 || i > size())
            throw std::out_of_range("ReplayStore: index " + std::to_string(i) +
                                    " outside [1, " + std::to_string(size()) + "]");
        return master_[static_cast<std::size_t>(i - 1)];
    }

    /// Appends x to the master set (count 1) and draws an independent
    /// Poisson(1) multiplicity per buffer, in buffer order. Returns those
    /// multiplicities.
    std::vector<unsigned> push(const Transition& x, Rng& rng) {
        validate(x);
        master_.push_back(x);
        std::vector<unsigned> zs(counts_.size());
        for (std::size_t k = 0; k < counts_.size(); ++k) {
            const unsigned z = rng.poisson1();
            zs[k] = z;
            counts_[k].push_back(z);
            if (z > 0) {
                ++nonzero_[k];
                if (z > max_count_[k]) max_count_[k] = z;
            }
        }
        return zs;
    }

    /// m draws with replacement from the master set; selection probability
    /// of example i is proportional to w(t,i).
    std::vector<std::int64_t> sample_master(WeightScheme scheme, int m, Rng& rng) const {
        if (empty()) throw std::runtime_error("ReplayStore: sample from empty master set");
        std::vector<std::int64_t> idx(m);
        for (int j = 0; j < m; ++j) idx[j] = draw_global(scheme, rng);
        return idx;
    }

    /// m draws with replacement from bootstrap buffer k; selection
    /// probability of example i is proportional to w(t,i) * count_k(i).
    /// Rejection on the multiplicity, with a weighted-scan fallback after
    /// 32 misses.
    std::vector<std::int64_t> sample_buffer(int k, WeightScheme scheme, int m, Rng& rng) const {
        if (!buffer_nonempty(k))
            throw std::runtime_error("ReplayStore: buffer " + std::to_string(k) +
                                     " has no examples with positive count");
        const auto& counts = counts_[k];
        const double max_count = static_cast<double>(max_count_[k]);
        std::vector<std::int64_t> idx(m);
        for (int j = 0; j < m; ++j) {
            std::int64_t chosen = -1;
            for (int tries = 0; tries < 32; ++tries) {
                const std::int64_t i = draw_global(scheme, rng);
                const auto c = counts[static_cast<std::size_t>(i - 1)];
                if (c > 0 && rng.uniform() * max_count < static_cast<double>(c)) {
                    chosen = i;
                    break;
                }
            }
            if (chosen < 0) chosen = scan_draw(k, scheme, rng);
            idx[j] = chosen;
        }
        return idx;
    }

    // Snapshot format (little-endian, documented in docs/formats.md):
    //   "UBUF" | u32 version=1 | u32 state_dim | u32 action_dim | u32 K | u64 t
    //   column s  (t * state_dim f64), column a, column s', column r (t f64)
    //   K count columns (t u32 each)
    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("ReplayStore: cannot open '" + path + "' for writing");
        os.write("UBUF", 4);
        detail::write_u32(os, 1);
        detail::write_u32(os, static_cast<std::uint32_t>(state_dim_));
        detail::write_u32(os, static_cast<std::uint32_t>(action_dim_));
        detail::write_u32(os, static_cast<std::uint32_t>(num_buffers()));
        detail::write_u64(os, static_cast<std::uint64_t>(size()));
        for (const auto& tr : master_)
            for (std::size_t i = 0; i < tr.s.numel(); ++i) detail::write_f64(os, tr.s[i]);
        for (const auto& tr : master_)
            for (std::size_t i = 0; i < tr.a.numel(); ++i) detail::write_f64(os, tr.a[i]);
        for (const auto& tr : master_)
            for (std::size_t i = 0; i < tr.s2.numel(); ++i) detail::write_f64(os, tr.s2[i]);
        for (const auto& tr : master_) detail::write_f64(os, tr.r);
        for (const auto& col : counts_)
            for (auto c : col) detail::write_u32(os, c);
        if (!os) throw std::runtime_error("ReplayStore: write to '" + path + "' failed");
    }

    static ReplayStore load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("ReplayStore: cannot open '" + path + "'");
        char magic[4];
        is.read(magic, 4);
        if (!is || std::string(magic, 4) != "UBUF")
            throw std::runtime_error("ReplayStore: '" + path + "' is not a buffer snapshot");
        const auto version = detail::read_u32(is);
        if (version != 1)
            throw std::runtime_error("ReplayStore: unsupported version " + std::to_string(version));
        const int sd = static_cast<int>(detail::read_u32(is));
        const int ad = static_cast<int>(detail::read_u32(is));
        const int K = static_cast<int>(detail::read_u32(is));
        const auto t = static_cast<std::int64_t>(detail::read_u64(is));
        ReplayStore store(sd, ad, K);
        store.master_.resize(static_cast<std::size_t>(t));
        for (auto& tr : store.master_) {
            tr.s = Tensor({sd});
            for (int i = 0; i < sd; ++i) tr.s[i] = detail::read_f64(is);
        }
        for (auto& tr : store.master_) {
            tr.a = Tensor({ad});
            for (int i = 0; i < ad; ++i) tr.a[i] = detail::read_f64(is);
        }
        for (auto& tr : store.master_) {
            tr.s2 = Tensor({sd});
            for (int i = 0; i < sd; ++i) tr.s2[i] = detail::read_f64(is);
        }
        for (auto& tr : store.master_) tr.r = detail::read_f64(is);
        for (int k = 0; k < K; ++k) {
            auto& col = store.counts_[k];
            col.resize(static_cast<std::size_t>(t));
            for (auto& c : col) {
                c = detail::read_u32(is);
                if (c > 0) {
                    ++store.nonzero_[k];
                    if (c > store.max_count_[k]) store.max_count_[k] = c;
                }
            }
        }
        return store;
    }

private:
    void validate(const Transition& x) const {
        if (x.s.numel() != static_cast<std::size_t>(state_dim_) ||
            x.s2.numel() != static_cast<std::size_t>(state_dim_) ||
            x.a.numel() != static_cast<std::size_t>(action_dim_)) {
            throw std::invalid_argument("ReplayStore: transition shapes s" + x.s.shape_string() +
                                        " a" + x.a.shape_string() + " s'" + x.s2.shape_string() +
                                        " do not match dims (" + std::to_string(state_dim_) +
                                        "," + std::to_string(action_dim_) + ")");
        }
        if (!x.s.all_finite() || !x.a.all_finite() || !x.s2.all_finite() || !std::isfinite(x.r))
            throw std::invalid_argument("ReplayStore: transition contains non-finite values");
    }

    std::int64_t draw_global(WeightScheme scheme, Rng& rng) const {
        const std::int64_t t = size();
        if (scheme == WeightScheme::Uniform)
            return static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(t))) + 1;
        const double total = 0.5 * static_cast<double>(t) * static_cast<double>(t + 1);
        double u = rng.uniform() * total;
        if (u >= total) u = std::nextafter(total, 0.0);
        return linear_inverse_cdf(u, t);
    }

    std::int64_t scan_draw(int k, WeightScheme scheme, Rng& rng) const {
        const auto& counts = counts_[k];
        const std::int64_t t = size();
        double total = 0.0;
        for (std::int64_t i = 1; i <= t; ++i) {
            const double w = scheme == WeightScheme::Linear ? static_cast<double>(i) : 1.0;
            total += w * counts[static_cast<std::size_t>(i - 1)];
        }
        const double r = rng.uniform() * total;
        double acc = 0.0;
        for (std::int64_t i = 1; i <= t; ++i) {
            const double w = scheme == WeightScheme::Linear ? static_cast<double>(i) : 1.0;
            acc += w * counts[static_cast<std::size_t>(i - 1)];
            if (acc > r) return i;
        }
        // numerically possible only when r lands on the total; return the
        // last positive-count entry
        for (std::int64_t i = t; i >= 1; --i)
            if (counts[static_cast<std::size_t>(i - 1)] > 0) return i;
        throw std::runtime_error("ReplayStore: scan over empty buffer");
    }

    int state_dim_;
    int action_dim_;
    std::vector<Transition> master_;
    std::vector<std::vector<std::uint32_t>> counts_;
    std::vector<std::uint32_t> max_count_;
    std::vector<std::size_t> nonzero_;
};

}  // namespace umbra
