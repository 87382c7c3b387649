#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "fplnet/autograd.hpp"
#include "fplnet/parameters.hpp"

namespace fplnet {

struct GradCheckOptions {
    double step = 1e-5;
    std::size_t samples = 64;
    double tolerance = 1e-4;
    /// Gradients smaller than this are compared in absolute terms.
    double floor = 1e-6;
    std::uint64_t seed = 7;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates skipped because a perturbation moved some PReLU input
    /// across its kink at 0.
    std::size_t excluded = 0;
    bool pass = false;
};

namespace detail {

/// Sign class (-1, 0, +1) of every element entering a PReLU node.
template <typename T>
std::vector<signed char> prelu_signature(const Graph<T>& g) {
    std::vector<signed char> sig;
    for (const auto& n : g.tape()) {
        if (n->kind != OpKind::prelu) continue;
        for (T v : n->inputs[0]->value().data()) sig.push_back(v > T(0) ? 1 : (v < T(0) ? -1 : 0));
    }
    return sig;
}

} // namespace detail

/// Compares reverse-mode gradients with central differences on a random
/// subsample of coordinates across the given trainable parameters.
/// `loss_fn` builds the fragment and returns a scalar node; it must be a pure
/// function of the parameter values.
inline GradCheckReport finite_diff_check(std::vector<Parameter<double>*> params,
                                         const std::function<Var<double>(Graph<double>&)>& loss_fn,
                                         const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    for (auto* p : params) p->zero_grad();
    Graph<double> base(true);
    Var<double> loss = loss_fn(base);
    base.backward(loss);
    const auto base_sig = detail::prelu_signature(base);

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t k = 0; k < params[i]->value.size(); ++k) coords.emplace_back(i, k);
    Rng rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);

    auto eval = [&](Parameter<double>& p, std::size_t k, double value, bool& kink) {
        const double saved = p.value[k];
        p.value[k] = value;
        Graph<double> g(true);
        const double out = loss_fn(g).value()[0];
        if (detail::prelu_signature(g) != base_sig) kink = true;
        p.value[k] = saved;
        return out;
    };

    for (const auto& [pi, k] : coords) {
        if (report.checked >= opt.samples) break;
        Parameter<double>& p = *params[pi];
        const double x = p.value[k];
        bool kink = false;
        const double up = eval(p, k, x + opt.step, kink);
        const double down = eval(p, k, x - opt.step, kink);
        if (kink) {
            ++report.excluded;
            continue;
        }
        const double numeric = (up - down) / (2.0 * opt.step);
        const double analytic = p.grad[k];
        const double denom = std::max({std::abs(numeric), std::abs(analytic), opt.floor});
        report.max_rel_error = std::max(report.max_rel_error, std::abs(numeric - analytic) / denom);
        ++report.checked;
    }
    report.pass = report.checked > 0 && report.max_rel_error < opt.tolerance;
    return report;
}

/// Every trainable parameter of a store.
inline std::vector<Parameter<double>*> trainable_parameters(ParameterStore<double>& store) {
    std::vector<Parameter<double>*> out;
    for (std::size_t i = 0; i < store.size(); ++i)
        if (store[i].trainable()) out.push_back(&store[i]);
    return out;
}

} // namespace fplnet
