#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fplnet/error.hpp"
#include "fplnet/tensor.hpp"

namespace fplnet {

/// Per-class frequency and the weight 1 / ln(c + p) derived from it.
struct ClassWeighting {
    std::vector<double> p_class;
    std::vector<double> w_class;
    double c = 1.02;
};

/// Rare classes get larger weights. Every c + p must exceed 1 so the log is
/// positive.
inline ClassWeighting class_weights(const std::vector<double>& frequencies, double c = 1.02) {
    ClassWeighting out;
    out.c = c;
    out.p_class = frequencies;
    out.w_class.reserve(frequencies.size());
    for (std::size_t k = 0; k < frequencies.size(); ++k) {
        const double p = frequencies[k];
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError("class_weights: frequency of class " + std::to_string(k) + " outside [0,1]");
        if (c + p <= 1.0)
            throw ConfigError("class_weights: ln(c + p) <= 0 for class " + std::to_string(k) + " (c=" +
                              std::to_string(c) + ")");
        out.w_class.push_back(1.0 / std::log(c + p));
    }
    return out;
}

inline ClassWeighting unit_weights(std::size_t classes) {
    ClassWeighting out;
    out.p_class.assign(classes, 0.0);
    out.w_class.assign(classes, 1.0);
    return out;
}

/// Mean over non-ignored pixels of w[t] * -log softmax(logits)[t]. When grad
/// is non-null it receives d(loss)/d(logits) (overwritten). All pixels ignored
/// gives loss 0 and a zero gradient.
template <typename T>
double weighted_cross_entropy(const Tensor<T>& logits, const LabelMap& targets, const std::vector<double>& weights,
                              std::int32_t ignore_index = LabelMap::kIgnore, Tensor<T>* grad = nullptr) {
    const Shape s = logits.shape();
    if (targets.n != s.n || targets.h != s.h || targets.w != s.w)
        throw ShapeError("weighted_cross_entropy: label map (" + std::to_string(targets.n) + "," +
                         std::to_string(targets.h) + "," + std::to_string(targets.w) + ") vs logits " + s.str());
    if (weights.size() != s.c)
        throw ShapeError("weighted_cross_entropy: " + std::to_string(weights.size()) + " class weights for " +
                         std::to_string(s.c) + " classes");
    std::size_t valid = 0;
    for (auto t : targets.data) {
        if (t == ignore_index) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= s.c)
            throw ShapeError("weighted_cross_entropy: target " + std::to_string(t) + " outside [0," +
                             std::to_string(s.c) + ")");
        ++valid;
    }
    if (grad) *grad = Tensor<T>(s);
    if (valid == 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(valid);
    const std::size_t plane = s.plane();
    std::vector<double> prob(s.c);
    double loss = 0.0;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < plane; ++i) {
            const std::int32_t t = targets.data[n * plane + i];
            if (t == ignore_index) continue;
            double mx = -INFINITY;
            for (std::size_t c = 0; c < s.c; ++c) mx = std::max(mx, static_cast<double>(logits.plane(n, c)[i]));
            double z = 0.0;
            for (std::size_t c = 0; c < s.c; ++c) {
                prob[c] = std::exp(static_cast<double>(logits.plane(n, c)[i]) - mx);
                z += prob[c];
            }
            const double w = weights[static_cast<std::size_t>(t)];
            const double logp = static_cast<double>(logits.plane(n, static_cast<std::size_t>(t))[i]) - mx - std::log(z);
            loss -= w * logp;
            if (grad) {
                for (std::size_t c = 0; c < s.c; ++c) {
                    const double g = w * inv * (prob[c] / z - (c == static_cast<std::size_t>(t) ? 1.0 : 0.0));
                    grad->plane(n, c)[i] = static_cast<T>(g);
                }
            }
        }
    return loss * inv;
}

} // namespace fplnet
