#pragma once

#include "errors.hpp"
#include "matrix.hpp"

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <string_view>

namespace dctkit {

/// splitmix64 finalizer; used to derive child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed of the generator called `name` under `parent`. Every random stream in the
/// library is derived this way from one root seed, so streams do not depend on
/// the order in which they are created.
constexpr std::uint64_t child_seed(std::uint64_t parent, std::string_view name) noexcept {
    return mix_seed(parent ^ hash_name(name));
}

inline std::mt19937_64 named_rng(std::uint64_t parent, std::string_view name) {
    return std::mt19937_64(child_seed(parent, name));
}

template <typename T>
struct Parameter {
    std::string name;
    DenseMatrix<T> value;
    DenseMatrix<T> grad;
    bool trainable = true;
};

/**
 * @brief Ordered registry of named parameters.
 *
 * Iteration follows registration order. Element addresses are stable, so
 * layers may hold `Parameter*` across further registrations.
 */
template <typename T>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    std::uint64_t seed() const noexcept { return seed_; }

    Parameter<T>& add(std::string name, DenseMatrix<T> value, bool trainable = true) {
        if (index_.count(name) != 0) {
            throw ParameterError("ParamStore: duplicate parameter name '" + name + "'");
        }
        DenseMatrix<T> grad(value.rows(), value.cols());
        params_.push_back(Parameter<T>{name, std::move(value), std::move(grad), trainable});
        index_.emplace(std::move(name), params_.size() - 1);
        return params_.back();
    }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn from the stream named after the parameter.
    Parameter<T>& add_uniform(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
        auto rng = named_rng(seed_, name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        DenseMatrix<T> value(rows, cols);
        for (auto& v : value.values()) {
            v = static_cast<T>(dist(rng));
        }
        return add(std::move(name), std::move(value));
    }

    Parameter<T>& add_constant(std::string name, std::size_t rows, std::size_t cols, T fill, bool trainable = true) {
        return add(std::move(name), DenseMatrix<T>(rows, cols, fill), trainable);
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Parameter<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw ParameterError("ParamStore: no parameter named '" + name + "'");
        }
        return params_[it->second];
    }
    const Parameter<T>& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

    std::size_t size() const noexcept { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad() {
        for (auto& p : params_) {
            p.grad.fill(T(0));
        }
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += p.trainable ? p.value.size() : 0;
        }
        return n;
    }

private:
    std::uint64_t seed_;
    std::deque<Parameter<T>> params_;
    std::map<std::string, std::size_t> index_;
};

} // namespace dctkit
