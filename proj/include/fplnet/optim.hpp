#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fplnet/error.hpp"
#include "fplnet/parameters.hpp"

namespace fplnet {

struct TrainConfig {
    double lr_init = 4.5e-2;
    double power = 0.9;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 6;
    std::size_t max_iter = 1000;
    double class_weight_c = 1.02;

    void validate() const {
        if (!(lr_init > 0.0)) throw ConfigError("train: lr_init must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
        if (!(power > 0.0)) throw ConfigError("train: power must be > 0");
        if (max_iter < 1) throw ConfigError("train: max_iter must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    }
};

/// lr_init * (1 - iter / max_iter)^power.
inline double poly_lr(std::size_t iter, const TrainConfig& cfg) {
    if (iter > cfg.max_iter)
        throw ConfigError("poly_lr: iter " + std::to_string(iter) + " > max_iter " + std::to_string(cfg.max_iter));
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
    return cfg.lr_init * std::pow(frac, cfg.power);
}

/// One velocity slot per trainable parameter, keyed by store position.
template <typename T>
struct SgdState {
    std::vector<Tensor<T>> velocity;
};

/// Coupled weight decay with heavy-ball momentum:
///   g <- grad + weight_decay * param
///   v <- momentum * v + g
///   param <- param - lr * v
/// Buffers (BN running statistics) are skipped.
template <typename T>
void sgd_step(ParameterStore<T>& params, SgdState<T>& state, double lr, const TrainConfig& cfg) {
    if (state.velocity.size() != params.size()) state.velocity.resize(params.size());
    const T wd = static_cast<T>(cfg.weight_decay), mom = static_cast<T>(cfg.momentum), step = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = params[i];
        if (!p.trainable()) continue;
        if (p.grad.empty()) p.zero_grad();
        if (p.grad.shape() != p.value.shape())
            throw ShapeError("sgd_step: gradient shape " + p.grad.shape().str() + " != parameter shape " +
                             p.value.shape().str() + " for '" + p.name + "'");
        Tensor<T>& v = state.velocity[i];
        if (v.empty()) v = Tensor<T>(p.value.shape());
        if (v.shape() != p.value.shape())
            throw ShapeError("sgd_step: velocity shape mismatch for '" + p.name + "'");
        auto w = p.value.data();
        const auto g = p.grad.data();
        auto vel = v.data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const T gk = g[k] + wd * w[k];
            vel[k] = mom * vel[k] + gk;
            w[k] -= step * vel[k];
        }
    }
}

} // namespace fplnet
