#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fplnet/error.hpp"
#include "fplnet/tensor.hpp"

namespace fplnet {

enum class ParamRole : std::uint8_t {
    conv_weight,
    bias,
    bn_gamma,
    bn_beta,
    prelu_slope,
    running_mean,
    running_var,
    other,
};

inline bool is_buffer(ParamRole r) { return r == ParamRole::running_mean || r == ParamRole::running_var; }

/// Which tensors a parameter count includes.
enum class CountConvention {
    /// Convolution / deconvolution kernels only (the module-comparison convention).
    weights_only,
    /// Every trainable tensor: kernels, biases, BN gamma/beta, PReLU slopes.
    /// BN running statistics are never counted.
    trainable,
};

inline bool counted_under(ParamRole r, CountConvention conv) {
    if (is_buffer(r)) return false;
    return conv == CountConvention::trainable || r == ParamRole::conv_weight;
}

template <typename T>
struct Parameter {
    std::string name;
    ParamRole role = ParamRole::other;
    Tensor<T> value;
    Tensor<T> grad;

    bool trainable() const { return !is_buffer(role); }
    void zero_grad() {
        if (grad.empty() || grad.shape() != value.shape())
            grad = Tensor<T>(value.shape());
        else
            grad.fill(T(0));
    }
};

/// Named parameter and buffer tensors in registration order. Addresses are
/// stable for the lifetime of the store.
template <typename T>
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) noexcept = default;
    ParameterStore& operator=(ParameterStore&&) noexcept = default;

    Parameter<T>& add(const std::string& name, Tensor<T> value, ParamRole role) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        index_[name] = items_.size();
        items_.push_back(std::make_unique<Parameter<T>>(Parameter<T>{name, role, std::move(value), Tensor<T>()}));
        return *items_.back();
    }

    Parameter<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }
    const Parameter<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }

    std::size_t size() const { return items_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *items_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *items_[i]; }

    std::size_t count(CountConvention conv) const {
        std::size_t total = 0;
        for (const auto& p : items_)
            if (counted_under(p->role, conv)) total += p->value.size();
        return total;
    }

    void zero_grad() {
        for (auto& p : items_)
            if (p->trainable()) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> items_;
    std::map<std::string, std::size_t> index_;
};

/// Seeded generator used for initialization and data synthesis.
using Rng = std::mt19937_64;

/// Uniform in [lo, hi) from 53 random bits; independent of the standard
/// library's distribution implementation.
inline double uniform(Rng& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
    return lo + (hi - lo) * u;
}

/// Kaiming-uniform (fan-in, ReLU gain) fill: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
void kaiming_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
    for (auto& v : t.data()) v = static_cast<T>(uniform(rng, -bound, bound));
}

} // namespace fplnet
