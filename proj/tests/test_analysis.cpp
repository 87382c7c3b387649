#include <gtest/gtest.h>

#include <sstream>

#include "fplnet/analysis.hpp"
#include "test_helpers.hpp"

using namespace fplnet;
using fplnet::testing::random_int;

namespace {

enum class Kind { conv, deconv, bilinear };

struct ProbeLayer {
    Kind kind = Kind::conv;
    std::size_t kh = 1, kw = 1, dilation = 1, stride = 1;

    KernelGeom geom() const {
        switch (kind) {
            case Kind::conv: return KernelGeom{kh, kw, dilation, stride, false, false};
            case Kind::deconv: return KernelGeom{kh, kw, 1, stride, true, false};
            case Kind::bilinear: return KernelGeom{2, 2, 1, stride, true, true};
        }
        return {};
    }
};

struct Extent {
    std::size_t h = 0, w = 0;
};

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

// Widest input support of any output pixel in a central window, found by
// back-propagating a unit impulse from each output pixel through all-ones
// kernels.
Extent impulse_extent(const std::vector<ProbeLayer>& stack, std::size_t size) {
    Shape out_shape;
    {
        Graph<double> g(false);
        out_shape = run_stack(g, g.input(Tensor<double>(Shape{1, 1, size, size})), stack).shape();
    }
    Extent best;
    const std::size_t win = 8;
    for (std::size_t oy = out_shape.h / 2 - win / 2; oy < out_shape.h / 2 + win / 2; ++oy)
        for (std::size_t ox = out_shape.w / 2 - win / 2; ox < out_shape.w / 2 + win / 2; ++ox) {
            Graph<double> g;
            auto x = g.input(Tensor<double>(Shape{1, 1, size, size}, 1.0), true);
            Tensor<double> r(out_shape);
            r(0, 0, oy, ox) = 1.0;
            g.backward(ag::dot(g, run_stack(g, x, stack), r));
            std::size_t y0 = size, y1 = 0, x0 = size, x1 = 0;
            for (std::size_t i = 0; i < size; ++i)
                for (std::size_t j = 0; j < size; ++j)
                    if (x.grad()(0, 0, i, j) != 0.0)
                        y0 = std::min(y0, i), y1 = std::max(y1, i), x0 = std::min(x0, j), x1 = std::max(x1, j);
            EXPECT_GT(y0, 0u);
            EXPECT_LT(y1, size - 1);
            best.h = std::max(best.h, y1 - y0 + 1);
            best.w = std::max(best.w, x1 - x0 + 1);
        }
    return best;
}

RfPath geoms(const std::vector<ProbeLayer>& stack) {
    RfPath p;
    for (const auto& l : stack) p.push_back(l.geom());
    return p;
}

std::vector<ProbeLayer> random_stack(Rng& rng) {
    std::vector<ProbeLayer> stack;
    const std::size_t depth = random_int(rng, 1, 4);
    std::size_t downs = 0;
    for (std::size_t i = 0; i < depth; ++i) {
        ProbeLayer l;
        const std::size_t pick = random_int(rng, 0, 9);
        if (pick < 7 || downs == 0) {
            l.kind = Kind::conv;
            l.kh = 2 * random_int(rng, 0, 2) + 1;
            l.kw = 2 * random_int(rng, 0, 2) + 1;
            l.dilation = random_int(rng, 1, 2);
            l.stride = downs < 2 ? random_int(rng, 1, 2) : 1;
            downs += l.stride == 2;
        } else if (pick < 9) {
            l.kind = Kind::deconv;
            l.kh = random_int(rng, 2, 3);
            l.kw = random_int(rng, 2, 3);
            l.stride = 2;
            --downs;
        } else {
            l.kind = Kind::bilinear;
            l.stride = 2;
            --downs;
        }
        stack.push_back(l);
    }
    return stack;
}

} // namespace

TEST(Symbolic, ReferenceCountsAt60Channels) {
    EXPECT_EQ(symbolic_param_count(ModuleFormula::conv, 60, 60, 3), 32400u);
    EXPECT_EQ(symbolic_param_count(ModuleFormula::esp, 60, 60, 3, 5), 7200u);
    EXPECT_EQ(symbolic_param_count(ModuleFormula::fpl_decomp, 60, 60, 3, 4), 11025u);
    EXPECT_EQ(symbolic_param_count(ModuleFormula::fpl, 60, 60, 3, 4), 8325u);
}

TEST(Symbolic, NamesAndErrors) {
    for (auto f : {ModuleFormula::conv, ModuleFormula::esp, ModuleFormula::fpl_decomp, ModuleFormula::fpl})
        EXPECT_EQ(parse_module_formula(module_formula_name(f)), f);
    EXPECT_THROW(parse_module_formula("dense"), ConfigError);
    EXPECT_THROW(symbolic_param_count(ModuleFormula::esp, 60, 62, 3, 5), ConfigError);
    EXPECT_THROW(symbolic_param_count(ModuleFormula::fpl, 0, 60, 3, 4), ConfigError);
}

TEST(Counting, EmptyAndModuleLevel) {
    EXPECT_EQ(count_params(std::vector<Parameter<double>*>{}, CountConvention::trainable), 0u);
    ParameterStore<double> store;
    Rng rng(1);
    FplBlock<double> fpl(store, "fpl", FplConfig::module(60, 60), rng);
    EXPECT_EQ(count_params(fpl.parameters(), CountConvention::weights_only), 8325u);
    // BN gamma/beta and PReLU slopes: reduce path n, four n-wide mids, C_o at the output
    const std::size_t n = 15;
    EXPECT_EQ(count_params(fpl.parameters(), CountConvention::trainable), 8325u + 3 * (n + 4 * n + 60));
}

TEST(ReceptiveField, SingleKernels) {
    EXPECT_EQ(receptive_field(RfPath{KernelGeom{3, 3, 16, 1}}).rf_h(), 33.0);
    EXPECT_EQ(receptive_field(RfPath{KernelGeom{3, 3, 16, 1}}).rf_w(), 33.0);
    EXPECT_EQ(receptive_field(RfPath{KernelGeom{3, 3, 1, 1}}).rf_h(), 3.0);
    EXPECT_EQ(receptive_field(RfPath{KernelGeom{3, 3, 1, 1}, KernelGeom{3, 3, 1, 1}}).rf_h(), 5.0);

    const Extent e = impulse_extent({ProbeLayer{Kind::conv, 3, 3, 16, 1}}, 49);
    EXPECT_EQ(e.h, 33u);
    EXPECT_EQ(e.w, 33u);
    EXPECT_EQ(impulse_extent({ProbeLayer{Kind::conv, 3, 3, 1, 1}, ProbeLayer{Kind::conv, 3, 3, 1, 1}}, 16).h, 5u);
}

TEST(ReceptiveField, ClosedFormMatchesImpulseOracleOnRandomStacks) {
    Rng rng(2024);
    std::size_t deconvs = 0, bilinears = 0, strided = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto stack = random_stack(rng);
        for (const auto& l : stack) {
            deconvs += l.kind == Kind::deconv;
            bilinears += l.kind == Kind::bilinear;
            strided += l.kind == Kind::conv && l.stride == 2;
        }
        const auto rep = receptive_field(geoms(stack));
        const Extent e = impulse_extent(stack, 128);
        EXPECT_EQ(rep.rf_h(), static_cast<double>(e.h)) << "trial " << trial;
        EXPECT_EQ(rep.rf_w(), static_cast<double>(e.w)) << "trial " << trial;
    }
    EXPECT_GT(deconvs, 0u);
    EXPECT_GT(bilinears, 0u);
    EXPECT_GT(strided, 0u);
}

TEST(ReceptiveField, WidestPathAndUnsupportedOps) {
    std::vector<RfLayer> layers{
        {"pyr", "pyramid", std::vector<RfPath>{{KernelGeom{3, 3, 1, 1}}, {KernelGeom{3, 3, 4, 1}}}},
        {"pass", "Concatenation", std::vector<RfPath>{}},
    };
    const auto rep = receptive_field(layers);
    EXPECT_EQ(rep.rf_h(), 9.0);
    EXPECT_EQ(rep.rows.size(), 2u);

    layers.push_back({"attn", "Attention", std::nullopt});
    try {
        receptive_field(layers);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("Attention"), std::string::npos);
    }
}

TEST(ReceptiveField, NetworkIsMonotoneThroughTheEncoder) {
    auto net = build_fplnet<float>(NetworkConfig{});
    const auto rep = receptive_field(*net);
    ASSERT_EQ(rep.rows.size(), 28u);
    for (std::size_t i = 1; i < 20; ++i) EXPECT_GE(rep.rows[i].rf_h, rep.rows[i - 1].rf_h) << i;
    EXPECT_EQ(rep.rows[19].jump_h, 8.0);
    EXPECT_EQ(rep.rows.back().jump_h, 1.0);
    EXPECT_GE(rep.rf_h(), rep.rows[19].rf_h);
}

TEST(Gridding, DenseAndDilatedSingleKernels) {
    EXPECT_EQ(gridding_diagnostic(3, 3, 1).score, 0.0);
    EXPECT_NEAR(gridding_diagnostic(3, 3, 2).score, 16.0 / 25.0, 1e-15);
    EXPECT_NEAR(gridding_diagnostic(3, 3, 3).score, 40.0 / 49.0, 1e-15);
}

TEST(Gridding, PairwiseFusionReducesGaps) {
    const FplConfig cfg = FplConfig::module(8, 8);
    const double pff = fpl_gridding(cfg, Fusion::pff).score;
    const double hff = fpl_gridding(cfg, Fusion::hff).score;
    const double none = fpl_gridding(cfg, Fusion::none).score;
    EXPECT_LT(pff, none);
    EXPECT_LT(hff, none);
    for (double s : {pff, hff, none}) {
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
    }
}

TEST(Gridding, RestoresParameters) {
    ParameterStore<double> store;
    Rng rng(3);
    FplBlock<double> blk(store, "m", FplConfig::module(4, 8), rng);
    std::vector<Tensor<double>> before;
    for (auto* p : blk.parameters()) before.push_back(p->value);
    gridding_diagnostic(blk);
    const auto after = blk.parameters();
    for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i]->value, before[i]) << after[i]->name;
}

TEST(Summary, DefaultTableAndJsonAgree) {
    auto net = build_fplnet<float>(NetworkConfig{});
    const auto s = summarize(*net, Shape{1, 3, 512, 1024});
    ASSERT_EQ(s.rows.size(), 28u);
    EXPECT_EQ(s.rows.back().c_out, 19u);
    EXPECT_EQ(s.rows.back().h_out, 512u);
    EXPECT_EQ(s.rows.back().w_out, 1024u);
    EXPECT_EQ(s.total_params, count_params(*net).total);

    const auto j = summary_json(s);
    ASSERT_EQ(j["layers"].size(), 28u);
    EXPECT_EQ(j["total_params"].get<std::size_t>(), s.total_params);

    // every text row ends with "<c_out> <h> x <w> <params>"
    std::istringstream text(summary_text(s));
    std::string line;
    std::getline(text, line);
    for (std::size_t i = 0; i < 28; ++i) {
        ASSERT_TRUE(std::getline(text, line));
        std::istringstream fields(line);
        std::vector<std::string> tok;
        for (std::string t; fields >> t;) tok.push_back(t);
        ASSERT_GE(tok.size(), 6u);
        const auto& row = j["layers"][i];
        const std::size_t k = tok.size();
        EXPECT_EQ(std::stoul(tok[0]), row["index"].get<std::size_t>());
        EXPECT_EQ(std::stoul(tok[k - 5]), row["c_out"].get<std::size_t>());
        EXPECT_EQ(std::stoul(tok[k - 4]), row["h_out"].get<std::size_t>());
        EXPECT_EQ(std::stoul(tok[k - 2]), row["w_out"].get<std::size_t>());
        EXPECT_EQ(std::stoul(tok[k - 1]), row["params"].get<std::size_t>());
        EXPECT_NE(line.find(row["op"].get<std::string>()), std::string::npos);
    }
    ASSERT_TRUE(std::getline(text, line));
    EXPECT_NE(line.find(std::to_string(s.total_params)), std::string::npos);
}

TEST(Summary, EncoderOnlyAddsTransitionRows) {
    NetworkConfig cfg;
    cfg.decoder = DecoderKind::encoder_only;
    const auto s = summarize(*build_fplnet<float>(cfg), Shape{1, 3, 512, 1024});
    ASSERT_EQ(s.rows.size(), 22u);
    EXPECT_EQ(s.rows[20].op, "Projection (Conv-1x1)");
    EXPECT_EQ(s.rows[20].params, 259u * 19 + 19);
    EXPECT_EQ(s.rows[21].op, "Bilinear (BLU-8X)");
}
