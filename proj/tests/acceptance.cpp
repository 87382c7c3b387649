#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fplnet/analysis.hpp"
#include "fplnet/blocks.hpp"
#include "fplnet/conv.hpp"
#include "fplnet/gradcheck.hpp"
#include "fplnet/loss.hpp"
#include "fplnet/metrics.hpp"
#include "fplnet/network.hpp"
#include "fplnet/optim.hpp"
#include "fplnet/train.hpp"
#include "test_helpers.hpp"

using namespace fplnet;
using fplnet::testing::max_abs_diff;
using fplnet::testing::random_int;
using fplnet::testing::random_tensor;
using fplnet::testing::rel_diff;

namespace {

constexpr double kSizeBand = 0.05;
constexpr double kFullReference = 490000.0;
constexpr double kEncoderReference = 419994.0;
constexpr double kConvOracleTol = 1e-12;
constexpr double kRankOneTol = 1e-10;
constexpr double kAdjointTol = 1e-10;
constexpr double kGradTol = 1e-4;
constexpr double kFormulaTol = 1e-9;
constexpr double kIouTol = 1e-12;
constexpr double kToyThreshold = 0.90;
constexpr std::size_t kToyMaxIters = 2000;
constexpr double kToyMaxSeconds = 20 * 60;

// 1 / ln(1.02) and 1 / ln(2.02), evaluated independently in double precision.
constexpr double kWeightRarest = 50.4983497918439;
constexpr double kWeightCommonest = 1.4222778260019158;

/// Collects failed checks; a criterion passes when none fail.
struct Check {
    std::vector<std::string> failures;
    std::string detail;

    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

std::string num(double v, int digits = 6) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

int run(int id, const std::string& name, const std::function<void(Check&)>& body) {
    Check c;
    const auto start = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = c.failures.empty();
    std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << " (" << c.detail
              << (c.detail.empty() ? "" : "; ") << num(secs, 3) << " s)";
    for (const auto& f : c.failures) std::cout << " | " << f;
    std::cout << std::endl;
    return pass ? 0 : 1;
}

std::size_t weights_only(const std::vector<Parameter<double>*>& ps) {
    return count_params(ps, CountConvention::weights_only);
}

// ---------------------------------------------------------------------------

void module_counts(Check& c) {
    const std::size_t ci = 60, co = 60, k = 3;
    c.expect(symbolic_param_count(ModuleFormula::conv, ci, co, k) == 32400, "symbolic conv != 32400");
    c.expect(symbolic_param_count(ModuleFormula::esp, ci, co, k, 5) == 7200, "symbolic esp != 7200");
    c.expect(symbolic_param_count(ModuleFormula::fpl_decomp, ci, co, k, 4) == 11025, "symbolic fpl_decomp != 11025");
    c.expect(symbolic_param_count(ModuleFormula::fpl, ci, co, k, 4) == 8325, "symbolic fpl != 8325");

    ParameterStore<double> store;
    Rng rng(1);
    ConvUnit<double> conv(store, "conv", ConvSpec::same(ci, co, k, k), rng);
    std::vector<Parameter<double>*> conv_params;
    conv.collect(conv_params);
    EspBlock<double> esp(store, "esp", EspConfig::module(ci, co), rng);
    FplConfig decomp = FplConfig::module(ci, co);
    decomp.factorize_bank = false;
    FplBlock<double> fd(store, "fpl_decomp", decomp, rng);
    FplBlock<double> fpl(store, "fpl", FplConfig::module(ci, co), rng);
    const std::size_t got[] = {weights_only(conv_params), weights_only(esp.parameters()), weights_only(fd.parameters()),
                               weights_only(fpl.parameters())};
    const std::size_t want[] = {32400, 7200, 11025, 8325};
    for (int i = 0; i < 4; ++i)
        c.expect(got[i] == want[i], "built count " + std::to_string(got[i]) + " != " + std::to_string(want[i]));
    c.detail = "built " + std::to_string(got[0]) + "/" + std::to_string(got[1]) + "/" + std::to_string(got[2]) + "/" +
               std::to_string(got[3]);
}

using Row = std::tuple<std::string, std::size_t, std::size_t, std::size_t>;

std::vector<Row> reference_layer_rows() {
    std::vector<Row> rows{
        {"Downsample (Conv-3)", 32, 256, 512},
        {"Conv-3", 32, 256, 512},
        {"Conv-3", 32, 256, 512},
        {"Concatenation", 35, 256, 512},
        {"Downsample (FPL)", 64, 128, 256},
    };
    for (int i = 0; i < 4; ++i) rows.emplace_back("FPL module", 64, 128, 256);
    rows.emplace_back("FIR unit", 131, 128, 256);
    rows.emplace_back("Downsample (FPL)", 128, 64, 128);
    for (int i = 0; i < 8; ++i) rows.emplace_back("FPL module", 128, 64, 128);
    rows.emplace_back("FIR unit", 259, 64, 128);
    rows.emplace_back("Projection (Conv-1x1)", 64, 64, 128);
    rows.emplace_back("Upsampler", 64, 128, 256);
    rows.emplace_back("FPL module", 64, 128, 256);
    rows.emplace_back("FPL module", 64, 128, 256);
    rows.emplace_back("Upsampler", 16, 256, 512);
    rows.emplace_back("FPL module", 16, 256, 512);
    rows.emplace_back("FPL module", 16, 256, 512);
    rows.emplace_back("Projection (Deconv)", 19, 512, 1024);
    return rows;
}

void layer_table(Check& c) {
    const auto net = build_fplnet<float>(NetworkConfig{});
    const auto shapes = net->layer_shapes(Shape{1, 3, 512, 1024});
    const auto want = reference_layer_rows();
    c.expect(shapes.size() == want.size(), std::to_string(shapes.size()) + " layers, expected 28");
    for (std::size_t i = 0; i < std::min(shapes.size(), want.size()); ++i) {
        const Row got{net->layers()[i]->op(), shapes[i].c, shapes[i].h, shapes[i].w};
        c.expect(got == want[i], "row " + std::to_string(i + 1) + " is " + std::get<0>(got) + " " +
                                     std::to_string(shapes[i].c) + "@" + std::to_string(shapes[i].h) + "x" +
                                     std::to_string(shapes[i].w));
    }
    c.detail = std::to_string(shapes.size()) + " rows";
}

std::size_t trainable_total(const NetworkConfig& cfg) { return count_params(*build_fplnet<float>(cfg)).total; }

void network_size(Check& c) {
    NetworkConfig full;
    NetworkConfig enc;
    enc.decoder = DecoderKind::encoder_only;
    const double nf = static_cast<double>(trainable_total(full));
    const double ne = static_cast<double>(trainable_total(enc));
    c.expect(std::abs(nf - kFullReference) / kFullReference <= kSizeBand, "full " + num(nf, 8) + " outside band");
    c.expect(std::abs(ne - kEncoderReference) / kEncoderReference <= kSizeBand, "encoder " + num(ne, 8) + " outside band");
    const auto fir = trainable_total(apply_ablation(full, "fusion:fir"));
    const auto concat = trainable_total(apply_ablation(full, "fusion:if_and_isff_concat"));
    c.expect(fir == concat, "FIR " + std::to_string(fir) + " != IF&ISFF-concat " + std::to_string(concat));
    c.detail = "full " + num(nf, 8) + " (" + num(100 * (nf - kFullReference) / kFullReference, 3) + "%), encoder " +
               num(ne, 8) + " (" + num(100 * (ne - kEncoderReference) / kEncoderReference, 3) + "%), FIR " +
               std::to_string(fir) + " == " + std::to_string(concat);
}

// ---------------------------------------------------------------------------
// Receptive field: closed form vs. back-propagated impulses

enum class Kind { conv, deconv, bilinear };

struct ProbeLayer {
    Kind kind = Kind::conv;
    std::size_t kh = 1, kw = 1, dilation = 1, stride = 1;
};

KernelGeom geom(const ProbeLayer& l) {
    switch (l.kind) {
        case Kind::conv: return KernelGeom{l.kh, l.kw, l.dilation, l.stride, false, false};
        case Kind::deconv: return KernelGeom{l.kh, l.kw, 1, l.stride, true, false};
        case Kind::bilinear: return KernelGeom{2, 2, 1, l.stride, true, true};
    }
    return {};
}

Var<double> run_stack(Graph<double>& g, Var<double> x, const std::vector<ProbeLayer>& stack) {
    for (const auto& l : stack) {
        if (l.kind == Kind::bilinear) {
            x = ag::bilinear_upsample(g, x, l.stride);
        } else if (l.kind == Kind::deconv) {
            const ConvSpec spec{1, 1, l.kh, l.kw, l.stride, 1, 0, 0, false};
            x = ag::transposed_conv2d(g, x, g.input(Tensor<double>(spec.transposed_weight_shape(), 1.0)), Var<double>(),
                                      spec);
        } else {
            const ConvSpec spec = ConvSpec::same(1, 1, l.kh, l.kw, l.dilation, l.stride);
            x = ag::conv2d(g, x, g.input(Tensor<double>(spec.conv_weight_shape(), 1.0)), spec);
        }
    }
    return x;
}

/// Widest input support (h, w) over an 8x8 window of central outputs; throws
/// if a support touches the border, since it would then be truncated.
std::pair<std::size_t, std::size_t> impulse_extent(const std::vector<ProbeLayer>& stack, std::size_t size) {
    Shape out;
    {
        Graph<double> g(false);
        out = run_stack(g, g.input(Tensor<double>(Shape{1, 1, size, size})), stack).shape();
    }
    std::size_t bh = 0, bw = 0;
    const std::size_t win = std::min<std::size_t>(8, out.h);
    for (std::size_t oy = out.h / 2 - win / 2; oy < out.h / 2 - win / 2 + win; ++oy)
        for (std::size_t ox = out.w / 2 - win / 2; ox < out.w / 2 - win / 2 + win; ++ox) {
            Graph<double> g;
            auto x = g.input(Tensor<double>(Shape{1, 1, size, size}, 1.0), true);
            Tensor<double> r(out);
            r(0, 0, oy, ox) = 1.0;
            g.backward(ag::dot(g, run_stack(g, x, stack), r));
            std::size_t y0 = size, y1 = 0, x0 = size, x1 = 0;
            for (std::size_t i = 0; i < size; ++i)
                for (std::size_t j = 0; j < size; ++j)
                    if (x.grad()(0, 0, i, j) != 0.0)
                        y0 = std::min(y0, i), y1 = std::max(y1, i), x0 = std::min(x0, j), x1 = std::max(x1, j);
            if (y0 == 0 || x0 == 0 || y1 == size - 1 || x1 == size - 1)
                throw Error("impulse support reaches the border of a " + std::to_string(size) + " input");
            bh = std::max(bh, y1 - y0 + 1);
            bw = std::max(bw, x1 - x0 + 1);
        }
    return {bh, bw};
}

std::vector<ProbeLayer> random_stack(Rng& rng) {
    std::vector<ProbeLayer> stack;
    const std::size_t depth = random_int(rng, 1, 4);
    std::size_t downs = 0;
    for (std::size_t i = 0; i < depth; ++i) {
        ProbeLayer l;
        const std::size_t pick = random_int(rng, 0, 9);
        if (pick < 7 || downs == 0) {
            l.kh = 2 * random_int(rng, 0, 2) + 1;
            l.kw = 2 * random_int(rng, 0, 2) + 1;
            l.dilation = random_int(rng, 1, 2);
            l.stride = downs < 2 ? random_int(rng, 1, 2) : 1;
            downs += l.stride == 2;
        } else {
            l.kind = pick < 9 ? Kind::deconv : Kind::bilinear;
            l.kh = random_int(rng, 2, 3);
            l.kw = random_int(rng, 2, 3);
            l.stride = 2;
            --downs;
        }
        stack.push_back(l);
    }
    return stack;
}

void receptive_fields(Check& c) {
    const ProbeLayer d16{Kind::conv, 3, 3, 16, 1};
    const auto closed = receptive_field(RfPath{geom(d16)});
    const auto [ih, iw] = impulse_extent({d16}, 49);
    c.expect(closed.rf_h() == 33 && closed.rf_w() == 33, "closed-form d=16 RF " + num(closed.rf_h()));
    c.expect(ih == 33 && iw == 33, "impulse d=16 RF " + std::to_string(ih) + "x" + std::to_string(iw));

    Rng rng(2024);
    std::size_t agree = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto stack = random_stack(rng);
        RfPath path;
        for (const auto& l : stack) path.push_back(geom(l));
        const auto rep = receptive_field(path);
        const auto [h, w] = impulse_extent(stack, 128);
        const bool ok = rep.rf_h() == static_cast<double>(h) && rep.rf_w() == static_cast<double>(w);
        c.expect(ok, "stack " + std::to_string(trial) + ": closed " + num(rep.rf_h()) + "x" + num(rep.rf_w()) +
                         " vs impulse " + std::to_string(h) + "x" + std::to_string(w));
        agree += ok;
    }
    c.detail = "d16 33x33, " + std::to_string(agree) + "/50 stacks agree";
}

// ---------------------------------------------------------------------------

void numerics(Check& c) {
    Rng rng(5);
    const std::size_t dils[] = {1, 2, 4, 16};
    double worst_conv = 0.0;
    int cases = 0;
    while (cases < 200) {
        const std::size_t c_in = random_int(rng, 1, 8), c_out = random_int(rng, 1, 8);
        const std::size_t kh = random_int(rng, 1, 3), kw = random_int(rng, 1, 3);
        const std::size_t d = dils[random_int(rng, 0, 3)], s = random_int(rng, 1, 2);
        const std::size_t h = random_int(rng, 1, 8), w = random_int(rng, 1, 8);
        const ConvSpec spec = ConvSpec::same(c_in, c_out, kh, kw, d, s, rng() % 2 == 0);
        if (spec.footprint_h() > h + 2 * spec.pad_h || spec.footprint_w() > w + 2 * spec.pad_w) continue;
        const auto x = random_tensor<double>(Shape{random_int(rng, 1, 2), c_in, h, w}, rng);
        const auto wt = random_tensor<double>(spec.conv_weight_shape(), rng);
        const auto b = random_tensor<double>(Shape{1, c_out, 1, 1}, rng);
        worst_conv = std::max(worst_conv, rel_diff(conv2d(x, wt, spec, &b), conv2d_oracle(x, wt, spec, &b)));
        ++cases;
    }
    c.expect(worst_conv < kConvOracleTol, "conv vs oracle rel err " + num(worst_conv));

    double worst_rank1 = 0.0;
    for (std::size_t d : {1u, 2u, 4u, 8u}) {
        const std::size_t ci = random_int(rng, 1, 4), co = random_int(rng, 1, 4);
        const auto u = random_tensor<double>(Shape{co, ci, 3, 1}, rng);
        const auto v = random_tensor<double>(Shape{co, co, 1, 3}, rng);
        // the composed kernel: full[o][i] = sum_m v[o][m] (outer) u[m][i]
        Tensor<double> full(Shape{co, ci, 3, 3});
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t i = 0; i < ci; ++i)
                for (std::size_t m = 0; m < co; ++m)
                    for (std::size_t ky = 0; ky < 3; ++ky)
                        for (std::size_t kx = 0; kx < 3; ++kx) full(o, i, ky, kx) += v(o, m, 0, kx) * u(m, i, ky, 0);
        const auto x = random_tensor<double>(Shape{1, ci, 20, 20}, rng);
        const auto pair = conv2d(conv2d(x, u, ConvSpec::same(ci, co, 3, 1, d)), v, ConvSpec::same(co, co, 1, 3, d));
        worst_rank1 = std::max(worst_rank1, max_abs_diff(pair, conv2d(x, full, ConvSpec::same(ci, co, 3, 3, d))));
    }
    c.expect(worst_rank1 < kRankOneTol, "rank-1 max abs diff " + num(worst_rank1));

    double worst_adj = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t a = random_int(rng, 1, 4), b = random_int(rng, 1, 4);
        const std::size_t k = random_int(rng, 1, 3), d = random_int(rng, 1, 2), s = random_int(rng, 1, 2);
        const ConvSpec conv = ConvSpec::same(a, b, k, k, d, s);
        const std::size_t out = random_int(rng, 2, 5);
        const std::size_t in = (out - 1) * s + conv.footprint_h() - 2 * conv.pad_h;
        const ConvSpec tconv{b, a, k, k, s, d, conv.pad_h, conv.pad_w, false};
        const auto x = random_tensor<double>(Shape{2, a, in, in}, rng);
        const auto w = random_tensor<double>(conv.conv_weight_shape(), rng);
        const auto cx = conv2d(x, w, conv);
        const auto y = random_tensor<double>(cx.shape(), rng);
        const auto ty = transposed_conv2d(y, w, tconv);
        if (ty.shape() != x.shape()) throw ShapeError("adjoint trial produced a mismatched shape");
        // <Cx, y> and <x, C^T y> summed independently of the library
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
        worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-12));
    }
    c.expect(worst_adj < kAdjointTol, "adjoint rel err " + num(worst_adj));
    c.detail = "conv " + num(worst_conv, 3) + " over 200, rank-1 " + num(worst_rank1, 3) + ", adjoint " +
               num(worst_adj, 3);
}

// ---------------------------------------------------------------------------

struct GradFixture {
    ParameterStore<double> store;
    Rng rng{5};

    Parameter<double>& input(const Shape& s) { return store.add("x", random_tensor<double>(s, rng), ParamRole::other); }
    Tensor<double> probe(const Shape& s) { return random_tensor<double>(s, rng); }

    GradCheckReport check(const std::function<Var<double>(Graph<double>&)>& f) {
        GradCheckOptions o;
        o.samples = 120;
        o.tolerance = kGradTol;
        return finite_diff_check(trainable_parameters(store), f, o);
    }
};

void gradients(Check& c) {
    double worst = 0.0;
    std::size_t checks = 0;
    auto record = [&](const std::string& what, const GradCheckReport& r) {
        c.expect(r.pass && r.max_rel_error < kGradTol, what + " rel err " + num(r.max_rel_error));
        c.expect(r.checked > 0, what + " checked no entries");
        worst = std::max(worst, r.max_rel_error);
        ++checks;
    };

    for (Fusion fusion : {Fusion::pff, Fusion::hff, Fusion::none}) {
        GradFixture f;
        auto& x = f.input(Shape{2, 4, 6, 6});
        FplConfig cfg = FplConfig::module(4, 8);
        cfg.fusion = fusion;
        FplBlock<double> m(f.store, "m", cfg, f.rng);
        const auto r = f.probe(Shape{2, 8, 6, 6});
        record(std::string("FPL ") + fusion_name(fusion),
               f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::train), r); }));
    }
    {
        GradFixture f;
        auto& x = f.input(Shape{2, 8, 5, 5});
        FplBlock<double> m(f.store, "m", FplConfig::module(8, 8), f.rng);
        const auto r = f.probe(Shape{2, 8, 5, 5});
        record("FPL residual",
               f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::train), r); }));
    }
    {
        GradFixture f;
        auto& x = f.input(Shape{2, 4, 8, 6});
        FplBlock<double> m(f.store, "m", FplConfig::downsampler(4, 8), f.rng);
        const auto r = f.probe(Shape{2, 8, 4, 3});
        record("FPL downsampler",
               f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::train), r); }));
    }
    for (std::size_t stride : {1u, 2u}) {
        GradFixture f;
        auto& x = f.input(Shape{2, 5, 6, 6});
        EspConfig cfg = EspConfig::module(5, 10);
        cfg.stride = stride;
        cfg.residual = stride == 1;
        EspBlock<double> m(f.store, "m", cfg, f.rng);
        const auto r = f.probe(m.output_shape(Shape{2, 5, 6, 6}));
        record("ESP stride " + std::to_string(stride),
               f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::train), r); }));
    }
    {
        GradFixture f;
        auto& deep = f.input(Shape{1, 3, 4, 4});
        auto& shallow = f.store.add("s", random_tensor<double>(Shape{1, 3, 4, 4}, f.rng), ParamRole::other);
        auto& img = f.store.add("i", random_tensor<double>(Shape{1, 2, 4, 4}, f.rng), ParamRole::other);
        const auto r = f.probe(Shape{1, 8, 4, 4});
        record("FIR", f.check([&](Graph<double>& g) {
            return ag::dot(g, fir_forward(g, g.param(deep), g.param(shallow), g.param(img)), r);
        }));
    }
    {
        GradFixture f;
        auto& img = f.input(Shape{2, 3, 6, 8});
        InitialModule<double> init(f.store, "init", 4, f.rng);
        const auto r = f.probe(Shape{2, 7, 3, 4});
        record("initial module",
               f.check([&](Graph<double>& g) { return ag::dot(g, init.forward(g, g.param(img), Mode::train), r); }));
    }
    {
        GradFixture f;
        auto& x = f.input(Shape{2, 6, 3, 3});
        DecoderStage<double> dec(f.store, "dec", 6, 4, 1, FplConfig::module(4, 4), f.rng);
        const auto r = f.probe(Shape{2, 4, 6, 6});
        record("decoder stage",
               f.check([&](Graph<double>& g) { return ag::dot(g, dec.forward(g, g.param(x), Mode::train), r); }));
    }
    {
        // initial module -> FPL downsampler -> FPL module
        GradFixture f;
        auto& img = f.input(Shape{2, 3, 8, 8});
        InitialModule<double> init(f.store, "init", 5, f.rng);
        FplBlock<double> down(f.store, "down", FplConfig::downsampler(8, 8), f.rng);
        FplBlock<double> mod(f.store, "mod", FplConfig::module(8, 8), f.rng);
        const auto r = f.probe(Shape{2, 8, 2, 2});
        record("3-block chain", f.check([&](Graph<double>& g) {
            auto y = init.forward(g, g.param(img), Mode::train);
            y = down.forward(g, y, Mode::train);
            return ag::dot(g, mod.forward(g, y, Mode::train), r);
        }));
    }
    c.detail = std::to_string(checks) + " checks, worst rel err " + num(worst, 3);
}

// ---------------------------------------------------------------------------

void formulas(Check& c) {
    TrainConfig cfg;
    c.expect(poly_lr(0, cfg) == 0.045, "poly_lr(0) = " + num(poly_lr(0, cfg), 17));
    const auto w = class_weights({0.0, 1.0}, 1.02);
    c.expect(std::abs(w.w_class[0] - kWeightRarest) < kFormulaTol, "w(p=0) = " + num(w.w_class[0], 17));
    c.expect(std::abs(w.w_class[1] - kWeightCommonest) < kFormulaTol, "w(p=1) = " + num(w.w_class[1], 17));

    double worst_ce = 0.0;
    for (std::size_t k : {2u, 3u, 7u, 19u}) {
        Tensor<double> logits(Shape{2, k, 3, 4}, 0.7);
        LabelMap t(2, 3, 4);
        for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<std::int32_t>(i % k);
        const double ce = weighted_cross_entropy(logits, t, unit_weights(k).w_class);
        worst_ce = std::max(worst_ce, std::abs(ce - std::log(static_cast<double>(k))));
    }
    c.expect(worst_ce < kFormulaTol, "uniform CE off ln K by " + num(worst_ce));
    c.detail = "w = " + num(w.w_class[0], 15) + ", " + num(w.w_class[1], 15) + "; CE err " + num(worst_ce, 3);
}

LabelMap random_labels(Rng& rng, std::size_t h, std::size_t w, std::size_t classes, bool with_ignore) {
    LabelMap m(1, h, w);
    for (auto& v : m.data) {
        v = static_cast<std::int32_t>(random_int(rng, 0, classes - 1));
        if (with_ignore && random_int(rng, 0, 9) == 0) v = LabelMap::kIgnore;
    }
    return m;
}

void miou_metric(Check& c) {
    Rng rng(11);
    int exact = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t classes = random_int(rng, 2, 8);
        std::vector<LabelMap> preds, truths;
        ConfusionMatrix cm(classes);
        for (int m = 0; m < 3; ++m) {
            const std::size_t h = random_int(rng, 1, 16), w = random_int(rng, 1, 16);
            preds.push_back(random_labels(rng, h, w, classes, false));
            truths.push_back(random_labels(rng, h, w, classes, true));
            cm.add(preds.back(), truths.back());
        }
        bool same = true;
        for (std::size_t t = 0; t < classes; ++t)
            for (std::size_t p = 0; p < classes; ++p) {
                std::uint64_t count = 0;
                for (std::size_t m = 0; m < preds.size(); ++m)
                    for (std::size_t i = 0; i < preds[m].size(); ++i)
                        count += truths[m].data[i] == static_cast<std::int32_t>(t) &&
                                 preds[m].data[i] == static_cast<std::int32_t>(p);
                same = same && cm(t, p) == count;
            }
        c.expect(same, "confusion mismatch in case " + std::to_string(trial));
        exact += same;
    }
    // class 1: one true positive, one false positive, one false negative
    LabelMap truth(1, 1, 3), pred(1, 1, 3);
    truth.data = {1, 0, 1};
    pred.data = {1, 1, 0};
    ConfusionMatrix cm(2);
    cm.add(pred, truth);
    const double iou = cm.iou(1).value_or(-1.0);
    c.expect(std::abs(iou - 1.0 / 3.0) < kIouTol, "crafted IoU " + num(iou, 17));
    c.detail = std::to_string(exact) + "/10 exact, crafted IoU " + num(iou, 17);
}

void toy_learning(Check& c) {
    const RunConfig rc = parse_run_config("net.preset = tiny\n", "acceptance");
    c.expect(rc.data.count == 200 && rc.toy.val_count == 50, "toy split is not 200/50");
    c.expect(rc.data.height == 64 && rc.data.width == 128, "toy images are not 64x128");
    c.expect(rc.toy.encoder_iters + rc.toy.full_iters <= kToyMaxIters, "more than 2000 iterations");
    const auto start = std::chrono::steady_clock::now();
    const auto result = run_toy_protocol<float>(rc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    c.expect(result.val.miou >= kToyThreshold, "held-out mIoU " + num(result.val.miou, 4) + " < 0.90");
    c.expect(secs <= kToyMaxSeconds, "took " + num(secs) + " s");
    c.detail = "held-out mIoU " + num(result.val.miou, 4) + " after " +
               std::to_string(rc.toy.encoder_iters + rc.toy.full_iters) + " iterations";
}

void gridding(Check& c) {
    const NetworkConfig tiny = NetworkConfig::tiny();
    FplConfig cfg = FplConfig::module(tiny.stage2_channels, tiny.stage2_channels);
    const double pff = fpl_gridding(cfg, Fusion::pff).score;
    const double none = fpl_gridding(cfg, Fusion::none).score;
    const double dense = gridding_diagnostic(3, 3, 1).score;
    c.expect(pff < none, "pff " + num(pff) + " not below none " + num(none));
    c.expect(dense == 0.0, "dense score " + num(dense));
    c.detail = "pff " + num(pff, 4) + " < none " + num(none, 4) + ", dense " + num(dense);
}

} // namespace

int main() {
    int failed = 0;
    failed += run(1, "module parameter counts", module_counts);
    failed += run(2, "default layer table", layer_table);
    failed += run(3, "network size and FIR equality", network_size);
    failed += run(4, "receptive field vs impulse oracle", receptive_fields);
    failed += run(5, "convolution numerics", numerics);
    failed += run(6, "gradient checks", gradients);
    failed += run(7, "schedule, class weights and loss", formulas);
    failed += run(8, "mIoU metric", miou_metric);
    failed += run(9, "toy learning", toy_learning);
    failed += run(10, "gridding property", gridding);
    std::cout << (10 - failed) << "/10 criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
