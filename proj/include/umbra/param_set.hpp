#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "umbra/binio.hpp"
#include "umbra/tensor.hpp"

namespace umbra {

/// An ordered collection of named tensors. Order is registration order and
/// is what flatten(), serialization, and tape registration all follow.
class ParamSet {
public:
    void add(const std::string& name, Tensor t) {
        if (index_.count(name))
            throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& operator[](const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::out_of_range("ParamSet: no parameter '" + name + "'");
        return entries_[it->second].second;
    }
    const Tensor& operator[](const std::string& name) const {
        return const_cast<ParamSet&>(*this)[name];
    }

    std::size_t size() const { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_[i].first; }
    Tensor& tensor(std::size_t i) { return entries_[i].second; }
    const Tensor& tensor(std::size_t i) const { return entries_[i].second; }

    std::size_t flat_size() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) n += t.numel();
        return n;
    }

    /// Concatenates all tensors in registration order; round-trips with
    /// unflatten() bit-exactly.
    std::vector<double> flatten() const {
        std::vector<double> flat;
        flat.reserve(flat_size());
        for (const auto& [_, t] : entries_)
            flat.insert(flat.end(), t.data(), t.data() + t.numel());
        return flat;
    }

    void unflatten(const std::vector<double>& flat) {
        if (flat.size() != flat_size())
            throw std::invalid_argument("ParamSet: flat length " + std::to_string(flat.size()) +
                                        " != expected " + std::to_string(flat_size()));
        std::size_t off = 0;
        for (auto& [_, t] : entries_) {
            std::copy(flat.begin() + off, flat.begin() + off + t.numel(), t.data());
            off += t.numel();
        }
    }

    double l2_norm() const {
        double s = 0.0;
        for (const auto& [_, t] : entries_)
            for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
        return std::sqrt(s);
    }

    bool all_finite() const {
        for (const auto& [_, t] : entries_)
            if (!t.all_finite()) return false;
        return true;
    }

    // Binary checkpoint format (little-endian, documented in docs/formats.md):
    //   "UMPS" | u32 version=1 | u32 n_entries
    //   per entry: u32 name_len | name bytes | u32 rank | u32 dims[rank]
    //   then all f64 values, entries concatenated in order, row-major.
    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("ParamSet: cannot open '" + path + "' for writing");
        os.write("UMPS", 4);
        detail::write_u32(os, 1);
        detail::write_u32(os, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& [name, t] : entries_) {
            detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
            for (int d : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
        }
        for (const auto& [_, t] : entries_)
            for (std::size_t i = 0; i < t.numel(); ++i) detail::write_f64(os, t[i]);
        if (!os) throw std::runtime_error("ParamSet: write to '" + path + "' failed");
    }

    static ParamSet load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("ParamSet: cannot open '" + path + "'");
        char magic[4];
        is.read(magic, 4);
        if (!is || std::string(magic, 4) != "UMPS")
            throw std::runtime_error("ParamSet: '" + path + "' is not a param file");
        const std::uint32_t version = detail::read_u32(is);
        if (version != 1)
            throw std::runtime_error("ParamSet: unsupported version " + std::to_string(version));
        const std::uint32_t n = detail::read_u32(is);
        ParamSet ps;
        for (std::uint32_t e = 0; e < n; ++e) {
            const std::uint32_t len = detail::read_u32(is);
            std::string name(len, '\0');
            is.read(name.data(), len);
            const std::uint32_t rank = detail::read_u32(is);
            std::vector<int> shape(rank);
            for (auto& d : shape) d = static_cast<int>(detail::read_u32(is));
            ps.add(name, Tensor(shape));
        }
        for (std::size_t e = 0; e < ps.size(); ++e) {
            Tensor& t = ps.tensor(e);
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = detail::read_f64(is);
        }
        return ps;
    }

    /// Shape-checked value copy from another set (e.g. a loaded checkpoint).
    void copy_values_from(const ParamSet& other) {
        if (other.size() != size())
            throw std::invalid_argument("ParamSet: entry count mismatch (" +
                                        std::to_string(other.size()) + " vs " +
                                        std::to_string(size()) + ")");
        for (std::size_t i = 0; i < size(); ++i) {
            const Tensor& src = other.tensor(i);
            Tensor& dst = entries_[i].second;
            if (other.name(i) != name(i) || !src.same_shape(dst))
                throw std::invalid_argument("ParamSet: entry '" + other.name(i) + "' " +
                                            src.shape_string() + " does not match '" +
                                            name(i) + "' " + dst.shape_string());
            std::copy(src.data(), src.data() + src.numel(), dst.data());
        }
    }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace umbra
