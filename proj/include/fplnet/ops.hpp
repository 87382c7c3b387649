#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fplnet/conv.hpp"
#include "fplnet/error.hpp"
#include "fplnet/tensor.hpp"

namespace fplnet {

enum class Mode { train, infer };

template <typename T>
struct BatchNormParams {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T epsilon = T(1e-5);
    T momentum = T(0.1);
    Mode mode = Mode::infer;

    static BatchNormParams identity(std::size_t channels, Mode mode = Mode::infer) {
        return BatchNormParams{std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0)),
                               std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1)),
                               T(1e-5), T(0.1), mode};
    }
};

template <typename T>
struct PReluParams {
    std::vector<T> slope;
};

/// Batch moments saved by a train-mode forward for the backward pass.
template <typename T>
struct BatchNormStats {
    std::vector<T> mean;
    std::vector<T> var;  // biased
    std::vector<T> inv_std;
    std::size_t count = 0;
};

namespace detail {

template <typename T>
void check_channels(const Shape& s, std::size_t n, const char* what) {
    if (s.c != n)
        throw ShapeError(std::string(what) + ": input has " + std::to_string(s.c) + " channels, params have " +
                         std::to_string(n));
}

template <typename T>
Tensor<T> bn_train_forward(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta, T eps,
                           BatchNormStats<T>& stats) {
    const Shape s = x.shape();
    check_channels<T>(s, gamma.size(), "batch_norm");
    const std::size_t count = s.n * s.plane();
    if (count < 2) throw ShapeError("batch_norm: train mode needs more than one value per channel, got " + s.str());
    stats.mean.assign(s.c, T(0));
    stats.var.assign(s.c, T(0));
    stats.inv_std.assign(s.c, T(0));
    stats.count = count;
    Tensor<T> y(s);
    for (std::size_t c = 0; c < s.c; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = x.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
        }
        const double mean = sum / static_cast<double>(count);
        double sq = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = x.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const double d = p[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / static_cast<double>(count);
        const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
        stats.mean[c] = static_cast<T>(mean);
        stats.var[c] = static_cast<T>(var);
        stats.inv_std[c] = static_cast<T>(inv_std);
        const T scale = static_cast<T>(gamma[c] * inv_std);
        const T shift = static_cast<T>(beta[c] - gamma[c] * mean * inv_std);
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = x.plane(n, c);
            T* q = y.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) q[i] = p[i] * scale + shift;
        }
    }
    return y;
}

template <typename T>
void bn_update_running(const BatchNormStats<T>& stats, std::span<T> running_mean, std::span<T> running_var,
                       T momentum) {
    const double unbias = static_cast<double>(stats.count) / static_cast<double>(stats.count - 1);
    for (std::size_t c = 0; c < stats.mean.size(); ++c) {
        running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * stats.mean[c];
        running_var[c] = (T(1) - momentum) * running_var[c] + momentum * static_cast<T>(stats.var[c] * unbias);
    }
}

template <typename T>
Tensor<T> bn_infer_forward(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                           std::span<const T> running_mean, std::span<const T> running_var, T eps) {
    const Shape s = x.shape();
    check_channels<T>(s, gamma.size(), "batch_norm");
    Tensor<T> y(s);
    for (std::size_t c = 0; c < s.c; ++c) {
        if (running_var[c] < T(0)) throw ConfigError("batch_norm: negative running variance");
        const T inv_std = T(1) / std::sqrt(running_var[c] + eps);
        const T scale = gamma[c] * inv_std;
        const T shift = beta[c] - running_mean[c] * scale;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = x.plane(n, c);
            T* q = y.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) q[i] = p[i] * scale + shift;
        }
    }
    return y;
}

/// Exact gradients of the batch-statistics normalization.
template <typename T>
void bn_train_backward(const Tensor<T>& x, const Tensor<T>& gy, std::span<const T> gamma,
                       const BatchNormStats<T>& stats, Tensor<T>* gx, T* ggamma, T* gbeta) {
    const Shape s = x.shape();
    const double m = static_cast<double>(stats.count);
    for (std::size_t c = 0; c < s.c; ++c) {
        const double mean = stats.mean[c], inv_std = stats.inv_std[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* xp = x.plane(n, c);
            const T* gp = gy.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                sum_dy += gp[i];
                sum_dy_xhat += gp[i] * (xp[i] - mean) * inv_std;
            }
        }
        if (ggamma) ggamma[c] += static_cast<T>(sum_dy_xhat);
        if (gbeta) gbeta[c] += static_cast<T>(sum_dy);
        if (!gx) continue;
        const double k = gamma[c] * inv_std / m;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* xp = x.plane(n, c);
            const T* gp = gy.plane(n, c);
            T* out = gx->plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const double xhat = (xp[i] - mean) * inv_std;
                out[i] += static_cast<T>(k * (m * gp[i] - sum_dy - xhat * sum_dy_xhat));
            }
        }
    }
}

/// Source index pair and weight for half-pixel-center bilinear sampling.
struct BilinearTap {
    std::size_t i0, i1;
    double w1;
};

inline std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t factor) {
    std::vector<BilinearTap> taps(in * factor);
    for (std::size_t o = 0; o < taps.size(); ++o) {
        double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        if (src < 0.0) src = 0.0;
        const double max_src = static_cast<double>(in - 1);
        if (src > max_src) src = max_src;
        const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = i0 + 1 < in ? i0 + 1 : i0;
        taps[o] = BilinearTap{i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

} // namespace detail

/// Normalizes per channel. Train mode uses batch statistics and updates the
/// running statistics in params; infer mode uses the running statistics only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormParams<T>& params) {
    if (params.mode == Mode::train) {
        BatchNormStats<T> stats;
        Tensor<T> y = detail::bn_train_forward<T>(input, params.gamma, params.beta, params.epsilon, stats);
        detail::bn_update_running<T>(stats, params.running_mean, params.running_var, params.momentum);
        return y;
    }
    return detail::bn_infer_forward<T>(input, params.gamma, params.beta, params.running_mean, params.running_var,
                                       params.epsilon);
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& input, std::span<const T> slope) {
    const Shape s = input.shape();
    detail::check_channels<T>(s, slope.size(), "prelu");
    Tensor<T> y(s);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* p = input.plane(n, c);
            T* q = y.plane(n, c);
            const T a = slope[c];
            for (std::size_t i = 0; i < s.plane(); ++i) q[i] = p[i] >= T(0) ? p[i] : a * p[i];
        }
    return y;
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& input, const PReluParams<T>& params) {
    return prelu(input, std::span<const T>(params.slope));
}

enum class MergeMode { add, concat };

/// add: elementwise sum of identically shaped tensors. concat: channel stack
/// in argument order; all inputs must share (n, h, w).
template <typename T>
Tensor<T> merge(const std::vector<const Tensor<T>*>& inputs, MergeMode mode) {
    if (inputs.empty()) throw ShapeError("merge: no inputs");
    const Shape first = inputs.front()->shape();
    if (mode == MergeMode::add) {
        Tensor<T> out = *inputs.front();
        for (std::size_t k = 1; k < inputs.size(); ++k) {
            require_same_shape(*inputs[k], out, "merge(add)");
            const auto src = inputs[k]->data();
            auto dst = out.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
        return out;
    }
    std::size_t channels = 0;
    for (const auto* t : inputs) {
        const Shape s = t->shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ShapeError("merge(concat): (n,h,w) mismatch " + s.str() + " vs " + first.str());
        channels += s.c;
    }
    Tensor<T> out(Shape{first.n, channels, first.h, first.w});
    for (std::size_t n = 0; n < first.n; ++n) {
        std::size_t offset = 0;
        for (const auto* t : inputs) {
            for (std::size_t c = 0; c < t->shape().c; ++c)
                std::copy_n(t->plane(n, c), first.plane(), out.plane(n, offset + c));
            offset += t->shape().c;
        }
    }
    return out;
}

template <typename T>
Tensor<T> merge(std::initializer_list<std::reference_wrapper<const Tensor<T>>> inputs, MergeMode mode) {
    std::vector<const Tensor<T>*> ptrs;
    for (const auto& r : inputs) ptrs.push_back(&r.get());
    return merge(ptrs, mode);
}

/// Bilinear upsampling by an integer factor with half-pixel centers:
/// output pixel o samples input coordinate (o + 0.5)/factor - 0.5, clamped
/// to the valid range.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, std::size_t factor) {
    if (factor < 1) throw ConfigError("bilinear_upsample: factor must be >= 1");
    const Shape s = input.shape();
    if (factor == 1) return input;
    Tensor<T> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
    const auto ty = detail::bilinear_taps(s.h, factor);
    const auto tx = detail::bilinear_taps(s.w, factor);
    const std::size_t ow = s.w * factor;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* in = input.plane(n, c);
            T* o = out.plane(n, c);
            for (std::size_t y = 0; y < ty.size(); ++y) {
                const T* r0 = in + ty[y].i0 * s.w;
                const T* r1 = in + ty[y].i1 * s.w;
                const T wy = static_cast<T>(ty[y].w1);
                for (std::size_t x = 0; x < tx.size(); ++x) {
                    const T wx = static_cast<T>(tx[x].w1);
                    const T top = r0[tx[x].i0] * (T(1) - wx) + r0[tx[x].i1] * wx;
                    const T bottom = r1[tx[x].i0] * (T(1) - wx) + r1[tx[x].i1] * wx;
                    o[y * ow + x] = top * (T(1) - wy) + bottom * wy;
                }
            }
        }
    return out;
}

/// Adjoint of bilinear_upsample.
template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& grad_out, const Shape& in_shape, std::size_t factor) {
    Tensor<T> gin(in_shape);
    if (factor == 1) return grad_out;
    const auto ty = detail::bilinear_taps(in_shape.h, factor);
    const auto tx = detail::bilinear_taps(in_shape.w, factor);
    const std::size_t ow = in_shape.w * factor;
    for (std::size_t n = 0; n < in_shape.n; ++n)
        for (std::size_t c = 0; c < in_shape.c; ++c) {
            T* g = gin.plane(n, c);
            const T* go = grad_out.plane(n, c);
            for (std::size_t y = 0; y < ty.size(); ++y) {
                T* r0 = g + ty[y].i0 * in_shape.w;
                T* r1 = g + ty[y].i1 * in_shape.w;
                const T wy = static_cast<T>(ty[y].w1);
                for (std::size_t x = 0; x < tx.size(); ++x) {
                    const T wx = static_cast<T>(tx[x].w1);
                    const T v = go[y * ow + x];
                    r0[tx[x].i0] += v * (T(1) - wy) * (T(1) - wx);
                    r0[tx[x].i1] += v * (T(1) - wy) * wx;
                    r1[tx[x].i0] += v * wy * (T(1) - wx);
                    r1[tx[x].i1] += v * wy * wx;
                }
            }
        }
    return gin;
}

/// Non-overlapping factor x factor mean pooling; spatial dims must divide.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& input, std::size_t factor) {
    const Shape s = input.shape();
    if (factor < 1) throw ConfigError("avg_pool: factor must be >= 1");
    if (s.h % factor != 0 || s.w % factor != 0)
        throw ShapeError("avg_pool: " + s.str() + " not divisible by factor " + std::to_string(factor));
    if (factor == 1) return input;
    const std::size_t oh = s.h / factor, ow = s.w / factor;
    Tensor<T> out(Shape{s.n, s.c, oh, ow});
    const T scale = T(1) / static_cast<T>(factor * factor);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* in = input.plane(n, c);
            T* o = out.plane(n, c);
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t x = 0; x < s.w; ++x) o[(y / factor) * ow + x / factor] += in[y * s.w + x];
            for (std::size_t i = 0; i < oh * ow; ++i) o[i] *= scale;
        }
    return out;
}

template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& grad_out, const Shape& in_shape, std::size_t factor) {
    if (factor == 1) return grad_out;
    Tensor<T> gin(in_shape);
    const std::size_t ow = in_shape.w / factor;
    const T scale = T(1) / static_cast<T>(factor * factor);
    for (std::size_t n = 0; n < in_shape.n; ++n)
        for (std::size_t c = 0; c < in_shape.c; ++c) {
            const T* go = grad_out.plane(n, c);
            T* g = gin.plane(n, c);
            for (std::size_t y = 0; y < in_shape.h; ++y)
                for (std::size_t x = 0; x < in_shape.w; ++x) g[y * in_shape.w + x] = go[(y / factor) * ow + x / factor] * scale;
        }
    return gin;
}

} // namespace fplnet
