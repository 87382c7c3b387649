#include <gtest/gtest.h>

#include "fplnet/analysis.hpp"
#include "fplnet/blocks.hpp"
#include "fplnet/gradcheck.hpp"
#include "test_helpers.hpp"

using namespace fplnet;
using fplnet::testing::random_tensor;

namespace {

std::size_t weights_of(const std::vector<Parameter<double>*>& ps) {
    return count_params(ps, CountConvention::weights_only);
}

// Kernel weights of an FPL module, counted layer by layer.
std::size_t fpl_weights_by_hand(std::size_t ci, std::size_t co, std::size_t k, std::size_t b, bool factorized) {
    const std::size_t n = co / b;
    const std::size_t bank = factorized ? b * (n * n * k + n * n * k) : b * n * n * k * k;
    return ci * n + n * n * k * k + bank;
}

GradCheckOptions block_options() {
    GradCheckOptions o;
    o.samples = 120;
    return o;
}

// Everything differentiable (input and block) lives in one store.
struct Fixture {
    ParameterStore<double> store;
    Rng rng{5};

    Parameter<double>& input(const Shape& s) { return store.add("x", random_tensor<double>(s, rng), ParamRole::other); }
    Tensor<double> probe(const Shape& s) { return random_tensor<double>(s, rng); }

    GradCheckReport check(const std::function<Var<double>(Graph<double>&)>& f) {
        return finite_diff_check(trainable_parameters(store), f, block_options());
    }
};

} // namespace

TEST(FplBlock, ReferenceModuleCountsAt60Channels) {
    ParameterStore<double> store;
    Rng rng(1);
    FplBlock<double> fpl(store, "fpl", FplConfig::module(60, 60), rng);
    EXPECT_EQ(weights_of(fpl.parameters()), 8325u);

    FplConfig decomp = FplConfig::module(60, 60);
    decomp.factorize_bank = false;
    FplBlock<double> fd(store, "fpl_decomp", decomp, rng);
    EXPECT_EQ(weights_of(fd.parameters()), 11025u);
}

TEST(FplBlock, BuiltCountsMatchClosedFormOverGrid) {
    Rng rng(2);
    for (std::size_t b : {2u, 4u}) {
        for (std::size_t ci : {8u, 12u, 60u}) {
            for (std::size_t co : {8u, 16u, 60u}) {
                if (co % b != 0) continue;
                FplConfig cfg = FplConfig::module(ci, co);
                cfg.branches = b;
                cfg.dilations.resize(b);
                for (std::size_t i = 0; i < b; ++i) cfg.dilations[i] = std::size_t{1} << i;
                for (bool fact : {true, false}) {
                    cfg.factorize_bank = fact;
                    ParameterStore<double> store;
                    FplBlock<double> blk(store, "m", cfg, rng);
                    const std::size_t built = weights_of(blk.parameters());
                    EXPECT_EQ(built, fpl_weights_by_hand(ci, co, 3, b, fact)) << ci << " " << co << " " << b;
                    const auto kind = fact ? ModuleFormula::fpl : ModuleFormula::fpl_decomp;
                    EXPECT_EQ(built, symbolic_param_count(kind, ci, co, 3, b)) << ci << " " << co << " " << b;
                }
            }
        }
    }
}

TEST(FplBlock, ShapesAtStrideOneAndTwo) {
    ParameterStore<float> store;
    Rng rng(3);
    FplBlock<float> m(store, "m", FplConfig::module(64, 64), rng);
    EXPECT_EQ(m.output_shape(Shape{1, 64, 128, 256}), (Shape{1, 64, 128, 256}));
    FplBlock<float> d1(store, "d1", FplConfig::downsampler(35, 64), rng);
    EXPECT_EQ(d1.output_shape(Shape{1, 35, 256, 512}), (Shape{1, 64, 128, 256}));
    FplBlock<float> d2(store, "d2", FplConfig::downsampler(131, 128), rng);
    EXPECT_EQ(d2.output_shape(Shape{1, 131, 128, 256}), (Shape{1, 128, 64, 128}));

    Graph<float> g(false);
    auto y = d1.forward(g, g.input(Tensor<float>(Shape{1, 35, 10, 14})), Mode::infer);
    EXPECT_EQ(y.shape(), (Shape{1, 64, 5, 7}));
    EXPECT_EQ(y.shape(), d1.output_shape(Shape{1, 35, 10, 14}));
}

TEST(FplBlock, ZeroInputGivesZeroOutput) {
    ParameterStore<double> store;
    Rng rng(4);
    FplBlock<double> m(store, "m", FplConfig::module(8, 8), rng);
    Graph<double> g(false);
    auto y = m.forward(g, g.input(Tensor<double>(Shape{1, 8, 9, 9})), Mode::infer);
    for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(FplBlock, ConfigErrors) {
    ParameterStore<double> store;
    Rng rng(5);
    auto build = [&](FplConfig c) { FplBlock<double>(store, "m", c, rng); };
    FplConfig c = FplConfig::module(8, 10);
    EXPECT_THROW(build(c), ConfigError);
    c = FplConfig::module(8, 8);
    c.dilations = {1, 2, 4};
    EXPECT_THROW(build(c), ConfigError);
    c.dilations = {1, 2, 2, 8};
    EXPECT_THROW(build(c), ConfigError);
    c = FplConfig::downsampler(8, 8);
    c.residual = true;
    EXPECT_THROW(build(c), ConfigError);
    FplBlock<double> ok(store, "ok", FplConfig::module(8, 8), rng);
    Graph<double> g(false);
    EXPECT_THROW(ok.forward(g, g.input(Tensor<double>(Shape{1, 4, 5, 5})), Mode::infer), ShapeError);
}

TEST(FplBlock, SameSeedSameWeightsAndOutput) {
    auto run = [] {
        ParameterStore<double> store;
        Rng rng(77);
        FplBlock<double> m(store, "m", FplConfig::module(8, 8), rng);
        Rng data(3);
        Graph<double> g(false);
        return m.forward(g, g.input(random_tensor<double>(Shape{2, 8, 7, 7}, data)), Mode::infer).value();
    };
    EXPECT_EQ(run(), run());
}

TEST(EspBlock, ReferenceModuleCountAt60Channels) {
    ParameterStore<double> store;
    Rng rng(6);
    EspBlock<double> esp(store, "esp", EspConfig::module(60, 60), rng);
    EXPECT_EQ(weights_of(esp.parameters()), 7200u);
    EXPECT_EQ(7200u, symbolic_param_count(ModuleFormula::esp, 60, 60, 3, 5));
}

TEST(EspBlock, ShapePreservingAndRemainderSplit) {
    ParameterStore<double> store;
    Rng rng(7);
    EspBlock<double> esp(store, "esp", EspConfig::module(10, 10), rng);
    Graph<double> g(false);
    auto y = esp.forward(g, g.input(random_tensor<double>(Shape{1, 10, 6, 6}, rng)), Mode::infer);
    EXPECT_EQ(y.shape(), (Shape{1, 10, 6, 6}));

    EspConfig odd = EspConfig::module(12, 12);
    EXPECT_THROW(EspBlock<double>(store, "bad", odd, rng), ConfigError);
    odd.split_remainder = true;
    EspBlock<double> rem(store, "rem", odd, rng);
    auto z = rem.forward(g, g.input(random_tensor<double>(Shape{1, 12, 6, 6}, rng)), Mode::infer);
    EXPECT_EQ(z.shape(), (Shape{1, 12, 6, 6}));
    // 12 = 4 + 2 + 2 + 2 + 2
    EXPECT_EQ(weights_of(rem.parameters()), 12u * 2 + 2u * 4 * 9 + 4u * 2 * 2 * 9);
}

TEST(Fir, ChannelsAndShallowZeroIdentity) {
    Rng rng(8);
    Graph<double> g(false);
    auto deep = g.input(random_tensor<double>(Shape{1, 64, 4, 8}, rng));
    auto zero = g.input(Tensor<double>(Shape{1, 64, 4, 8}));
    auto img = g.input(random_tensor<double>(Shape{1, 3, 4, 8}, rng));
    auto y = fir_forward(g, deep, zero, img);
    EXPECT_EQ(y.shape().c, 131u);
    EXPECT_EQ(channel_slice(y.value(), 0, 64), deep.value());
    EXPECT_EQ(channel_slice(y.value(), 64, 64), deep.value());
    EXPECT_EQ(channel_slice(y.value(), 128, 3), img.value());

    auto d2 = g.input(Tensor<double>(Shape{1, 128, 2, 4}));
    auto i2 = g.input(Tensor<double>(Shape{1, 3, 2, 4}));
    EXPECT_EQ(fir_forward(g, d2, d2, i2).shape().c, 259u);
    EXPECT_THROW(fir_forward(g, deep, d2, img), ShapeError);
    EXPECT_THROW(fir_forward(g, d2, d2, img), ShapeError);
}

TEST(InitialModule, ShapeAndImageConcat) {
    ParameterStore<float> store;
    Rng rng(9);
    InitialModule<float> init(store, "init", 32, rng);
    Graph<float> g(false);
    auto img = random_tensor<float>(Shape{1, 3, 16, 32}, rng);
    auto y = init.forward(g, g.input(img), Mode::infer);
    EXPECT_EQ(y.shape(), (Shape{1, 35, 8, 16}));
    EXPECT_EQ(channel_slice(y.value(), 32, 3), avg_pool(img, 2));
    EXPECT_THROW(init.forward(g, g.input(Tensor<float>(Shape{1, 1, 16, 32})), Mode::infer), ShapeError);
}

TEST(DecoderStage, ShapesAndBranchWidth) {
    ParameterStore<float> store;
    Rng rng(10);
    DecoderStage<float> dec(store, "dec", 64, 16, 2, FplConfig::module(16, 16), rng);
    Graph<float> g(false);
    auto y = dec.forward(g, g.input(random_tensor<float>(Shape{1, 64, 4, 8}, rng)), Mode::infer);
    EXPECT_EQ(y.shape(), (Shape{1, 16, 8, 16}));
    EXPECT_EQ(FplConfig::module(16, 16).branch_width(), 4u);
}

TEST(BlockGradients, FplEveryFusionAndFactorization) {
    for (Fusion fusion : {Fusion::pff, Fusion::hff, Fusion::none}) {
        for (bool stage1 : {false, true}) {
            Fixture f;
            auto& x = f.input(Shape{2, 4, 6, 6});
            FplConfig cfg = FplConfig::module(4, 8);
            cfg.fusion = fusion;
            cfg.factorize_stage1 = stage1;
            FplBlock<double> m(f.store, "m", cfg, f.rng);
            auto r = f.probe(Shape{2, 8, 6, 6});
            auto rep = f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::train), r); });
            EXPECT_TRUE(rep.pass) << fusion_name(fusion) << " stage1=" << stage1 << " err " << rep.max_rel_error;
            EXPECT_GE(rep.checked, 50u);
        }
    }
}

TEST(BlockGradients, FplResidualAndDownsampler) {
    {
        Fixture f;
        auto& x = f.input(Shape{2, 8, 5, 5});
        FplBlock<double> m(f.store, "m", FplConfig::module(8, 8), f.rng);
        auto r = f.probe(Shape{2, 8, 5, 5});
        auto rep = f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::train), r); });
        EXPECT_TRUE(rep.pass) << rep.max_rel_error;
    }
    {
        Fixture f;
        auto& x = f.input(Shape{2, 4, 8, 6});
        FplBlock<double> m(f.store, "m", FplConfig::downsampler(4, 8), f.rng);
        auto r = f.probe(Shape{2, 8, 4, 3});
        auto rep = f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::train), r); });
        EXPECT_TRUE(rep.pass) << rep.max_rel_error;
    }
}

TEST(BlockGradients, EspModuleAndDownsampler) {
    for (std::size_t stride : {1u, 2u}) {
        Fixture f;
        auto& x = f.input(Shape{2, 5, 6, 6});
        EspConfig cfg = EspConfig::module(5, 10);
        cfg.stride = stride;
        cfg.residual = stride == 1;
        EspBlock<double> m(f.store, "m", cfg, f.rng);
        auto r = f.probe(m.output_shape(Shape{2, 5, 6, 6}));
        auto rep = f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::train), r); });
        EXPECT_TRUE(rep.pass) << "stride " << stride << " err " << rep.max_rel_error;
    }
}

TEST(BlockGradients, FirInitialModuleAndDecoderStage) {
    {
        Fixture f;
        auto& deep = f.input(Shape{1, 3, 4, 4});
        auto& shallow = f.store.add("s", random_tensor<double>(Shape{1, 3, 4, 4}, f.rng), ParamRole::other);
        auto& img = f.store.add("i", random_tensor<double>(Shape{1, 2, 4, 4}, f.rng), ParamRole::other);
        auto r = f.probe(Shape{1, 8, 4, 4});
        auto rep = f.check([&](Graph<double>& g) {
            return ag::dot(g, fir_forward(g, g.param(deep), g.param(shallow), g.param(img)), r);
        });
        EXPECT_TRUE(rep.pass) << rep.max_rel_error;
    }
    {
        Fixture f;
        auto& img = f.input(Shape{2, 3, 6, 8});
        InitialModule<double> init(f.store, "init", 4, f.rng);
        auto r = f.probe(Shape{2, 7, 3, 4});
        auto rep = f.check([&](Graph<double>& g) { return ag::dot(g, init.forward(g, g.param(img), Mode::train), r); });
        EXPECT_TRUE(rep.pass) << rep.max_rel_error;
    }
    {
        Fixture f;
        auto& x = f.input(Shape{2, 6, 3, 3});
        DecoderStage<double> dec(f.store, "dec", 6, 4, 1, FplConfig::module(4, 4), f.rng);
        auto r = f.probe(Shape{2, 4, 6, 6});
        auto rep = f.check([&](Graph<double>& g) { return ag::dot(g, dec.forward(g, g.param(x), Mode::train), r); });
        EXPECT_TRUE(rep.pass) << rep.max_rel_error;
    }
}

TEST(BlockGradients, InferModeFpl) {
    Fixture f;
    auto& x = f.input(Shape{1, 4, 6, 6});
    FplBlock<double> m(f.store, "m", FplConfig::module(4, 8), f.rng);
    for (auto* p : m.parameters())
        if (p->role == ParamRole::running_var) p->value.fill(1.5);
    auto r = f.probe(Shape{1, 8, 6, 6});
    auto rep = f.check([&](Graph<double>& g) { return ag::dot(g, m.forward(g, g.param(x), Mode::infer), r); });
    EXPECT_TRUE(rep.pass) << rep.max_rel_error;
}
