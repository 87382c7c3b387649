#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fplnet/blocks.hpp"
#include "fplnet/error.hpp"
#include "fplnet/network.hpp"
#include "fplnet/parameters.hpp"

namespace fplnet {

// ---------------------------------------------------------------------------
// Parameter counting

enum class ModuleFormula { conv, esp, fpl_decomp, fpl };

inline const char* module_formula_name(ModuleFormula f) {
    switch (f) {
        case ModuleFormula::conv: return "conv";
        case ModuleFormula::esp: return "esp";
        case ModuleFormula::fpl_decomp: return "fpl_decomp";
        case ModuleFormula::fpl: return "fpl";
    }
    return "?";
}

inline ModuleFormula parse_module_formula(const std::string& s) {
    for (auto f : {ModuleFormula::conv, ModuleFormula::esp, ModuleFormula::fpl_decomp, ModuleFormula::fpl})
        if (s == module_formula_name(f)) return f;
    throw ConfigError("unknown module kind '" + s + "' (expected conv, esp, fpl_decomp or fpl)");
}

/// Closed-form kernel-weight counts of the four module designs:
///   conv:       C_i C_o k^2
///   esp:        (C_o / b)   (C_i + k^2 C_o)
///   fpl_decomp: (C_o / b^2) (b C_i + k^2 C_o + k^2 b C_o)
///   fpl:        (C_o / b^2) (b C_i + k^2 C_o + 2 k b C_o)
/// A non-integer result means the configuration cannot be built.
inline std::uint64_t symbolic_param_count(ModuleFormula kind, std::uint64_t ci, std::uint64_t co, std::uint64_t k,
                                          std::uint64_t b = 1) {
    if (ci == 0 || co == 0 || k == 0) throw ConfigError("symbolic_param_count: C_i, C_o and k must be >= 1");
    if (kind != ModuleFormula::conv && b == 0) throw ConfigError("symbolic_param_count: b must be >= 1");
    std::uint64_t num = 0, den = 1;
    switch (kind) {
        case ModuleFormula::conv: num = ci * co * k * k; break;
        case ModuleFormula::esp: num = co * (ci + k * k * co), den = b; break;
        case ModuleFormula::fpl_decomp: num = co * (b * ci + k * k * co + k * k * b * co), den = b * b; break;
        case ModuleFormula::fpl: num = co * (b * ci + k * k * co + 2 * k * b * co), den = b * b; break;
    }
    if (num % den != 0)
        throw ConfigError(std::string("symbolic_param_count: ") + module_formula_name(kind) + " gives the non-integer " +
                          std::to_string(num) + "/" + std::to_string(den) + " for C_i=" + std::to_string(ci) +
                          ", C_o=" + std::to_string(co) + ", k=" + std::to_string(k) + ", b=" + std::to_string(b));
    return num / den;
}

inline const char* convention_name(CountConvention c) {
    return c == CountConvention::weights_only ? "weights_only" : "trainable";
}

template <typename T>
std::size_t count_params(const std::vector<Parameter<T>*>& params, CountConvention conv) {
    std::size_t total = 0;
    for (const auto* p : params)
        if (counted_under(p->role, conv)) total += p->value.size();
    return total;
}

struct ParamRow {
    std::size_t index = 0;
    std::string name;
    std::string op;
    std::string stage;
    std::size_t params = 0;
};

struct ParamReport {
    CountConvention convention = CountConvention::trainable;
    std::vector<ParamRow> rows;
    std::map<std::string, std::size_t> per_stage;
    std::size_t total = 0;
};

template <typename T>
ParamReport count_params(const Network<T>& net, CountConvention conv = CountConvention::trainable) {
    ParamReport r;
    r.convention = conv;
    std::size_t i = 0;
    for (const auto& l : net.layers()) {
        ParamRow row{++i, l->name(), l->op(), l->stage(), count_params(l->parameters(), conv)};
        r.per_stage[row.stage] += row.params;
        r.total += row.params;
        r.rows.push_back(std::move(row));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Receptive field

/// Geometry of one layer for receptive-field propagation. `paths` empty
/// (but engaged) means the layer passes the field through unchanged;
/// disengaged means the op is not supported.
struct RfLayer {
    std::string name;
    std::string op;
    std::optional<std::vector<RfPath>> paths;
};

struct RfRow {
    std::string name;
    std::string op;
    double rf_h = 1, rf_w = 1;
    /// Cumulative stride of the layer's output grid, in input pixels.
    double jump_h = 1, jump_w = 1;
};

struct RfReport {
    std::vector<RfRow> rows;
    double rf_h() const { return rows.empty() ? 1.0 : rows.back().rf_h; }
    double rf_w() const { return rows.empty() ? 1.0 : rows.back().rf_w; }
};

namespace detail {

/// Extends (rf, jump) along one axis through one kernel.
inline void rf_step(double& rf, double& jump, std::size_t k, std::size_t d, std::size_t s, bool transposed,
                    bool interpolating) {
    if (interpolating) {
        // each output interpolates between k neighbouring inputs
        rf += static_cast<double>(k - 1) * jump;
        jump /= static_cast<double>(s);
    } else if (transposed) {
        const std::size_t taps = (k + s - 1) / s;  // inputs reaching one output
        rf += static_cast<double>((taps - 1) * d) * jump;
        jump /= static_cast<double>(s);
    } else {
        rf += static_cast<double>(d * (k - 1)) * jump;
        jump *= static_cast<double>(s);
    }
}

} // namespace detail

/// Closed-form propagation: rf <- rf + d (k - 1) * jump, jump <- jump * stride,
/// taking the widest path through each layer.
inline RfReport receptive_field(const std::vector<RfLayer>& layers) {
    std::string unsupported;
    for (const auto& l : layers)
        if (!l.paths) unsupported += (unsupported.empty() ? "" : ", ") + l.op + " (" + l.name + ")";
    if (!unsupported.empty()) throw ConfigError("receptive_field: unsupported op(s): " + unsupported);
    RfReport rep;
    double rf_h = 1, rf_w = 1, jh = 1, jw = 1;
    for (const auto& l : layers) {
        double best_h = rf_h, best_w = rf_w, njh = jh, njw = jw;
        bool first = true;
        for (const auto& path : *l.paths) {
            double h = rf_h, w = rf_w, ph = jh, pw = jw;
            for (const auto& g : path) {
                detail::rf_step(h, ph, g.kh, g.dilation, g.stride, g.transposed, g.interpolating);
                detail::rf_step(w, pw, g.kw, g.dilation, g.stride, g.transposed, g.interpolating);
            }
            best_h = std::max(best_h, h), best_w = std::max(best_w, w);
            if (first) njh = ph, njw = pw, first = false;
            else if (ph != njh || pw != njw)
                throw ShapeError("receptive_field: paths of '" + l.name + "' disagree on output stride");
        }
        rf_h = best_h, rf_w = best_w, jh = njh, jw = njw;
        rep.rows.push_back(RfRow{l.name, l.op, rf_h, rf_w, jh, jw});
    }
    return rep;
}

/// A plain chain of kernels.
inline RfReport receptive_field(const RfPath& stack) {
    std::vector<RfLayer> layers;
    for (std::size_t i = 0; i < stack.size(); ++i)
        layers.push_back(RfLayer{"layer" + std::to_string(i + 1), stack[i].transposed ? "deconv" : "conv",
                                 std::vector<RfPath>{RfPath{stack[i]}}});
    return receptive_field(layers);
}

template <typename T>
std::vector<RfLayer> rf_layers(const Network<T>& net) {
    std::vector<RfLayer> out;
    for (const auto& l : net.layers()) out.push_back(RfLayer{l->name(), l->op(), l->paths()});
    return out;
}

template <typename T>
RfReport receptive_field(const Network<T>& net) {
    return receptive_field(rf_layers(net));
}

// ---------------------------------------------------------------------------
// Gridding diagnostic

struct GriddingReport {
    /// Mean over output channels of the per-channel gap fraction.
    double score = 0.0;
    std::vector<double> per_channel;
};

/// Sends a centred unit impulse (in every input channel) through a fragment
/// whose kernels are all ones, biases zero and batch norms identity (infer
/// mode). For each output channel the support's bounding box is that
/// channel's receptive field, since every weight is positive; the channel's
/// score is the fraction of that box with exactly zero response. Parameter
/// values are restored afterwards.
inline GriddingReport gridding_diagnostic(const std::vector<Parameter<double>*>& params,
                                          const std::function<Var<double>(Graph<double>&, const Var<double>&)>& forward,
                                          std::size_t c_in, std::size_t extent) {
    std::vector<Tensor<double>> saved;
    for (auto* p : params) saved.push_back(p->value);
    for (auto* p : params) {
        switch (p->role) {
            case ParamRole::conv_weight:
            case ParamRole::bn_gamma:
            case ParamRole::running_var: p->value.fill(1.0); break;
            case ParamRole::bias:
            case ParamRole::bn_beta:
            case ParamRole::running_mean: p->value.fill(0.0); break;
            default: break;
        }
    }
    const std::size_t size = 2 * extent + 1;
    Tensor<double> x(Shape{1, c_in, size, size});
    for (std::size_t c = 0; c < c_in; ++c) x(0, c, extent, extent) = 1.0;
    Tensor<double> y;
    try {
        Graph<double> g(false);
        y = forward(g, g.input(x)).value();
    } catch (...) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
        throw;
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];

    GriddingReport rep;
    const Shape s = y.shape();
    for (std::size_t c = 0; c < s.c; ++c) {
        std::size_t y0 = s.h, y1 = 0, x0 = s.w, x1 = 0;
        for (std::size_t i = 0; i < s.h; ++i)
            for (std::size_t j = 0; j < s.w; ++j)
                if (y(0, c, i, j) != 0.0) y0 = std::min(y0, i), y1 = std::max(y1, i), x0 = std::min(x0, j), x1 = std::max(x1, j);
        if (y0 > y1) {
            rep.per_channel.push_back(1.0);
            continue;
        }
        std::size_t zeros = 0;
        for (std::size_t i = y0; i <= y1; ++i)
            for (std::size_t j = x0; j <= x1; ++j) zeros += y(0, c, i, j) == 0.0;
        rep.per_channel.push_back(static_cast<double>(zeros) / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1)));
    }
    for (double v : rep.per_channel) rep.score += v;
    rep.score /= static_cast<double>(rep.per_channel.size());
    return rep;
}

namespace detail {

inline std::size_t paths_extent(const std::vector<RfPath>& paths) {
    std::vector<RfLayer> one{RfLayer{"block", "block", paths}};
    const auto r = receptive_field(one);
    return static_cast<std::size_t>(std::ceil(std::max(r.rf_h(), r.rf_w())));
}

} // namespace detail

inline GriddingReport gridding_diagnostic(const FplBlock<double>& block) {
    return gridding_diagnostic(
        block.parameters(), [&](Graph<double>& g, const Var<double>& x) { return block.forward(g, x, Mode::infer); },
        block.config().c_in, detail::paths_extent(block.paths()));
}

inline GriddingReport gridding_diagnostic(const EspBlock<double>& block) {
    return gridding_diagnostic(
        block.parameters(), [&](Graph<double>& g, const Var<double>& x) { return block.forward(g, x, Mode::infer); },
        block.config().c_in, detail::paths_extent(block.paths()));
}

/// A single convolution with the given geometry, one channel in and out.
inline GriddingReport gridding_diagnostic(std::size_t kh, std::size_t kw, std::size_t dilation) {
    ParameterStore<double> store;
    Rng rng(0);
    ConvUnit<double> conv(store, "conv", ConvSpec::same(1, 1, kh, kw, dilation), rng);
    std::vector<Parameter<double>*> params;
    conv.collect(params);
    return gridding_diagnostic(
        params, [&](Graph<double>& g, const Var<double>& x) { return conv.forward(g, x); }, 1,
        detail::paths_extent({RfPath{conv.geometry()}}));
}

/// Gridding score of a freshly built FPL module with the given fusion.
inline GriddingReport fpl_gridding(FplConfig cfg, Fusion fusion) {
    cfg.fusion = fusion;
    ParameterStore<double> store;
    Rng rng(0);
    FplBlock<double> block(store, "fpl", cfg, rng);
    return gridding_diagnostic(block);
}

// ---------------------------------------------------------------------------
// Architecture summary

struct SummaryRow {
    std::size_t index = 0;
    std::string op;
    std::string name;
    std::size_t c_out = 0;
    std::size_t h_out = 0;
    std::size_t w_out = 0;
    std::size_t params = 0;
};

struct Summary {
    Shape input;
    CountConvention convention = CountConvention::trainable;
    std::vector<SummaryRow> rows;
    std::size_t total_params = 0;
};

template <typename T>
Summary summarize(const Network<T>& net, const Shape& input, CountConvention conv = CountConvention::trainable) {
    Summary s;
    s.input = input;
    s.convention = conv;
    const auto shapes = net.layer_shapes(input);
    const auto report = count_params(net, conv);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& l = net.layers()[i];
        s.rows.push_back(SummaryRow{i + 1, l->op(), l->name(), shapes[i].c, shapes[i].h, shapes[i].w, report.rows[i].params});
    }
    s.total_params = report.total;
    return s;
}

inline nlohmann::json summary_json(const Summary& s) {
    nlohmann::json j;
    j["input"] = {{"n", s.input.n}, {"c", s.input.c}, {"h", s.input.h}, {"w", s.input.w}};
    j["convention"] = convention_name(s.convention);
    j["layers"] = nlohmann::json::array();
    for (const auto& r : s.rows)
        j["layers"].push_back({{"index", r.index},
                               {"op", r.op},
                               {"name", r.name},
                               {"c_out", r.c_out},
                               {"h_out", r.h_out},
                               {"w_out", r.w_out},
                               {"params", r.params}});
    j["total_params"] = s.total_params;
    return j;
}

inline std::string summary_text(const Summary& s) {
    std::size_t op_w = 9;
    for (const auto& r : s.rows) op_w = std::max(op_w, r.op.size());
    std::ostringstream os;
    os << std::left << std::setw(4) << "#" << std::setw(static_cast<int>(op_w) + 2) << "Operation" << std::right
       << std::setw(8) << "Out Ch." << std::setw(14) << "Out Res." << std::setw(10) << "Params" << "\n";
    for (const auto& r : s.rows) {
        const std::string res = std::to_string(r.h_out) + " x " + std::to_string(r.w_out);
        os << std::left << std::setw(4) << r.index << std::setw(static_cast<int>(op_w) + 2) << r.op << std::right
           << std::setw(8) << r.c_out << std::setw(14) << res << std::setw(10) << r.params << "\n";
    }
    os << "total parameters (" << convention_name(s.convention) << "): " << s.total_params << "\n";
    return os.str();
}

} // namespace fplnet
