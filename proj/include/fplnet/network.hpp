#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fplnet/autograd.hpp"
#include "fplnet/blocks.hpp"
#include "fplnet/error.hpp"
#include "fplnet/ops.hpp"
#include "fplnet/parameters.hpp"

namespace fplnet {

enum class Downsampling { delayed, hasty };
enum class ModuleKind { fpl, esp };
/// none: unfactorized bank; composite: factorized bank, symmetric stage 1;
/// all: stage 1 factorized as well.
enum class Factorization { none, composite, all };
/// How the end of encoder stages 2 and 3 combines the last module output
/// (deep), the stage's downsampler output (shallow) and the pooled image.
enum class FusionStrategy { image, isff_add, isff_concat, if_and_isff_add, if_and_isff_concat, fir };
enum class DecoderKind { sequential, encoder_only };

inline const char* downsampling_name(Downsampling d) { return d == Downsampling::delayed ? "delayed" : "hasty"; }
inline const char* module_kind_name(ModuleKind m) { return m == ModuleKind::fpl ? "fpl" : "esp"; }
inline const char* factorization_name(Factorization f) {
    switch (f) {
        case Factorization::none: return "none";
        case Factorization::composite: return "composite";
        case Factorization::all: return "all";
    }
    return "?";
}
inline const char* fusion_strategy_name(FusionStrategy f) {
    switch (f) {
        case FusionStrategy::image: return "if";
        case FusionStrategy::isff_add: return "isff_add";
        case FusionStrategy::isff_concat: return "isff_concat";
        case FusionStrategy::if_and_isff_add: return "if_and_isff_add";
        case FusionStrategy::if_and_isff_concat: return "if_and_isff_concat";
        case FusionStrategy::fir: return "fir";
    }
    return "?";
}
inline const char* decoder_kind_name(DecoderKind d) { return d == DecoderKind::sequential ? "sequential" : "encoder_only"; }

/// Output channels of a stage-end fusion for c feature channels.
inline std::size_t fused_channels(FusionStrategy f, std::size_t c, std::size_t image_channels) {
    switch (f) {
        case FusionStrategy::image: return c + image_channels;
        case FusionStrategy::isff_add: return c;
        case FusionStrategy::isff_concat: return 2 * c;
        case FusionStrategy::if_and_isff_add: return c + image_channels;
        case FusionStrategy::if_and_isff_concat: return 2 * c + image_channels;
        case FusionStrategy::fir: return 2 * c + image_channels;
    }
    return c;
}

inline const char* fusion_op_name(FusionStrategy f) {
    switch (f) {
        case FusionStrategy::image: return "Image fusion (IF)";
        case FusionStrategy::isff_add: return "ISFF (add)";
        case FusionStrategy::isff_concat: return "ISFF (concat)";
        case FusionStrategy::if_and_isff_add: return "IF & ISFF (add)";
        case FusionStrategy::if_and_isff_concat: return "IF & ISFF (concat)";
        case FusionStrategy::fir: return "FIR unit";
    }
    return "?";
}

struct NetworkConfig {
    std::size_t num_classes = 19;
    std::size_t image_channels = 3;
    std::size_t stage2_modules = 4;
    std::size_t stage3_modules = 8;
    std::size_t stage1_channels = 32;
    std::size_t stage2_channels = 64;
    std::size_t stage3_channels = 128;
    std::size_t decoder1_channels = 64;
    std::size_t decoder2_channels = 16;
    std::size_t decoder1_modules = 2;
    std::size_t decoder2_modules = 2;
    std::size_t branches = 4;
    std::vector<std::size_t> dilations{1, 2, 4, 8};
    Fusion module_fusion = Fusion::pff;
    Downsampling downsampling = Downsampling::delayed;
    ModuleKind module_kind = ModuleKind::fpl;
    Factorization factorization = Factorization::composite;
    FusionStrategy fusion_strategy = FusionStrategy::fir;
    DecoderKind decoder = DecoderKind::sequential;
    std::uint64_t seed = 1;

    /// Stage counts (2, 2), every width quartered, three classes.
    static NetworkConfig tiny() {
        NetworkConfig c;
        c.num_classes = 3;
        c.stage2_modules = 2;
        c.stage3_modules = 2;
        c.stage1_channels = 8;
        c.stage2_channels = 16;
        c.stage3_channels = 32;
        c.decoder1_channels = 16;
        c.decoder2_channels = 4;
        return c;
    }

    void validate() const {
        if (num_classes < 1) throw ConfigError("network: num_classes must be >= 1");
        if (image_channels < 1) throw ConfigError("network: image_channels must be >= 1");
        if (stage2_modules < 1 || stage3_modules < 1) throw ConfigError("network: stage module counts must be >= 1");
        for (std::size_t c : {stage1_channels, stage2_channels, stage3_channels, decoder1_channels, decoder2_channels})
            if (c < 1) throw ConfigError("network: channel widths must be >= 1");
        if (module_kind == ModuleKind::fpl) {
            for (std::size_t c : {stage2_channels, stage3_channels, decoder1_channels, decoder2_channels})
                if (branches == 0 || c % branches != 0)
                    throw ConfigError("network: width " + std::to_string(c) + " not divisible by branches " +
                                      std::to_string(branches));
            if (dilations.size() != branches)
                throw ConfigError("network: " + std::to_string(dilations.size()) + " dilation rates for " +
                                  std::to_string(branches) + " branches");
        }
    }
};

/// Per-forward scratch shared by layers: the input image and the output of
/// the current stage's first (downsampling) layer.
template <typename T>
struct ForwardState {
    Graph<T>& graph;
    Mode mode;
    Var<T> image;
    Var<T> shallow;
};

/// Shape-only counterpart of ForwardState.
struct ShapeState {
    Shape image;
    Shape shallow;
};

/// One row of the architecture table.
template <typename T>
class Layer {
public:
    Layer(std::string op, std::string name, std::string stage) : op_(std::move(op)), name_(std::move(name)), stage_(std::move(stage)) {}
    virtual ~Layer() = default;

    virtual Var<T> forward(ForwardState<T>& st, const Var<T>& x) const = 0;
    virtual Shape output_shape(const Shape& in, ShapeState& st) const = 0;
    /// Alternative conv chains from this layer's input to its output. An
    /// empty list means the layer does not widen the receptive field.
    virtual std::vector<RfPath> paths() const { return {}; }
    virtual std::vector<Parameter<T>*> parameters() const { return {}; }

    const std::string& op() const { return op_; }
    const std::string& name() const { return name_; }
    const std::string& stage() const { return stage_; }
    /// The output of this layer is the stage's shallow feature.
    bool starts_stage = false;

private:
    std::string op_, name_, stage_;
};

namespace layers {

template <typename T>
class ConvLayer final : public Layer<T> {
public:
    ConvLayer(std::string op, std::string stage, ParameterStore<T>& store, const std::string& name, const ConvSpec& spec,
              Rng& rng)
        : Layer<T>(std::move(op), name, std::move(stage)), unit_(store, name, spec, rng) {}
    Var<T> forward(ForwardState<T>& st, const Var<T>& x) const override { return unit_.forward(st.graph, x, st.mode); }
    Shape output_shape(const Shape& in, ShapeState&) const override { return unit_.output_shape(in); }
    std::vector<RfPath> paths() const override { return {RfPath{unit_.geometry()}}; }
    std::vector<Parameter<T>*> parameters() const override {
        std::vector<Parameter<T>*> out;
        unit_.collect(out);
        return out;
    }

private:
    ConvBnAct<T> unit_;
};

/// Concat with the image mean-pooled to the current resolution.
template <typename T>
class ImageConcat final : public Layer<T> {
public:
    ImageConcat(std::string stage, const std::string& name) : Layer<T>("Concatenation", name, std::move(stage)) {}
    Var<T> forward(ForwardState<T>& st, const Var<T>& x) const override {
        return ag::concat(st.graph, {x, pooled_image(st, x.shape())});
    }
    Shape output_shape(const Shape& in, ShapeState& st) const override {
        check_factor(st.image, in);
        return Shape{in.n, in.c + st.image.c, in.h, in.w};
    }

    static std::size_t check_factor(const Shape& image, const Shape& x) {
        if (x.h == 0 || image.h % x.h != 0 || image.w % x.w != 0 || image.h / x.h != image.w / x.w)
            throw ShapeError("image " + image.str() + " cannot be pooled onto features " + x.str());
        return image.h / x.h;
    }
    static Var<T> pooled_image(ForwardState<T>& st, const Shape& x) {
        const std::size_t f = check_factor(st.image.shape(), x);
        return f == 1 ? st.image : ag::avg_pool(st.graph, st.image, f);
    }
};

template <typename T>
class FplLayer final : public Layer<T> {
public:
    FplLayer(std::string op, std::string stage, ParameterStore<T>& store, const std::string& name, const FplConfig& cfg,
             Rng& rng)
        : Layer<T>(std::move(op), name, std::move(stage)), block_(store, name, cfg, rng) {}
    Var<T> forward(ForwardState<T>& st, const Var<T>& x) const override { return block_.forward(st.graph, x, st.mode); }
    Shape output_shape(const Shape& in, ShapeState&) const override { return block_.output_shape(in); }
    std::vector<RfPath> paths() const override { return block_.paths(); }
    std::vector<Parameter<T>*> parameters() const override { return block_.parameters(); }

private:
    FplBlock<T> block_;
};

template <typename T>
class EspLayer final : public Layer<T> {
public:
    EspLayer(std::string op, std::string stage, ParameterStore<T>& store, const std::string& name, const EspConfig& cfg,
             Rng& rng)
        : Layer<T>(std::move(op), name, std::move(stage)), block_(store, name, cfg, rng) {}
    Var<T> forward(ForwardState<T>& st, const Var<T>& x) const override { return block_.forward(st.graph, x, st.mode); }
    Shape output_shape(const Shape& in, ShapeState&) const override { return block_.output_shape(in); }
    std::vector<RfPath> paths() const override { return block_.paths(); }
    std::vector<Parameter<T>*> parameters() const override { return block_.parameters(); }

private:
    EspBlock<T> block_;
};

/// Parameter-free fusion closing encoder stages 2 and 3.
template <typename T>
class StageFusion final : public Layer<T> {
public:
    StageFusion(FusionStrategy f, std::string stage, const std::string& name)
        : Layer<T>(fusion_op_name(f), name, std::move(stage)), strategy_(f) {}

    Var<T> forward(ForwardState<T>& st, const Var<T>& deep) const override {
        Graph<T>& g = st.graph;
        auto shallow = [&] {
            if (!st.shallow) throw Error("stage fusion: no shallow feature recorded for this stage");
            if (st.shallow.shape() != deep.shape())
                throw ShapeError("stage fusion: deep " + deep.shape().str() + " vs shallow " + st.shallow.shape().str());
            return st.shallow;
        };
        auto image = [&] { return ImageConcat<T>::pooled_image(st, deep.shape()); };
        switch (strategy_) {
            case FusionStrategy::image: return ag::concat(g, {deep, image()});
            case FusionStrategy::isff_add: return ag::add(g, deep, shallow());
            case FusionStrategy::isff_concat: return ag::concat(g, {deep, shallow()});
            case FusionStrategy::if_and_isff_add: return ag::concat(g, {ag::add(g, deep, shallow()), image()});
            case FusionStrategy::if_and_isff_concat: return ag::concat(g, {deep, shallow(), image()});
            case FusionStrategy::fir: return fir_forward(g, deep, shallow(), image());
        }
        throw Error("stage fusion: unknown strategy");
    }

    Shape output_shape(const Shape& in, ShapeState& st) const override {
        if (st.shallow != in) throw ShapeError("stage fusion: deep " + in.str() + " vs shallow " + st.shallow.str());
        ImageConcat<T>::check_factor(st.image, in);
        return Shape{in.n, fused_channels(strategy_, in.c, st.image.c), in.h, in.w};
    }

private:
    FusionStrategy strategy_;
};

/// 1x1 projection with bias and no normalization (encoder-only head).
template <typename T>
class HeadProjection final : public Layer<T> {
public:
    HeadProjection(std::string stage, ParameterStore<T>& store, const std::string& name, std::size_t c_in,
                   std::size_t classes, Rng& rng)
        : Layer<T>("Projection (Conv-1x1)", name, std::move(stage)),
          unit_(store, name, ConvSpec::same(c_in, classes, 1, 1, 1, 1, true), rng) {}
    Var<T> forward(ForwardState<T>& st, const Var<T>& x) const override { return unit_.forward(st.graph, x); }
    Shape output_shape(const Shape& in, ShapeState&) const override { return unit_.output_shape(in); }
    std::vector<RfPath> paths() const override { return {RfPath{unit_.geometry()}}; }
    std::vector<Parameter<T>*> parameters() const override {
        std::vector<Parameter<T>*> out;
        unit_.collect(out);
        return out;
    }

private:
    ConvUnit<T> unit_;
};

template <typename T>
class BilinearLayer final : public Layer<T> {
public:
    BilinearLayer(std::string stage, const std::string& name, std::size_t factor)
        : Layer<T>("Bilinear (BLU-" + std::to_string(factor) + "X)", name, std::move(stage)), factor_(factor) {}
    Var<T> forward(ForwardState<T>& st, const Var<T>& x) const override {
        return ag::bilinear_upsample(st.graph, x, factor_);
    }
    Shape output_shape(const Shape& in, ShapeState&) const override {
        return Shape{in.n, in.c, in.h * factor_, in.w * factor_};
    }
    std::vector<RfPath> paths() const override {
        return {RfPath{KernelGeom{2, 2, 1, factor_, true, true}}};
    }

private:
    std::size_t factor_;
};

template <typename T>
class UpsamplerLayer final : public Layer<T> {
public:
    UpsamplerLayer(std::string stage, ParameterStore<T>& store, const std::string& name, std::size_t c_in,
                   std::size_t c_out, Rng& rng)
        : Layer<T>("Upsampler", name, std::move(stage)), up_(store, name, c_in, c_out, rng) {}
    Var<T> forward(ForwardState<T>& st, const Var<T>& x) const override { return up_.forward(st.graph, x, st.mode); }
    Shape output_shape(const Shape& in, ShapeState&) const override { return up_.output_shape(in); }
    std::vector<RfPath> paths() const override { return {RfPath{up_.geometry()}}; }
    std::vector<Parameter<T>*> parameters() const override {
        std::vector<Parameter<T>*> out;
        up_.collect(out);
        return out;
    }

private:
    Upsampler<T> up_;
};

/// Final kernel-2 stride-2 deconvolution to class logits, with bias.
template <typename T>
class DeconvProjection final : public Layer<T> {
public:
    DeconvProjection(std::string stage, ParameterStore<T>& store, const std::string& name, std::size_t c_in,
                     std::size_t classes, Rng& rng)
        : Layer<T>("Projection (Deconv)", name, std::move(stage)),
          unit_(store, name, ConvSpec{c_in, classes, 2, 2, 2, 1, 0, 0, true}, rng, true) {}
    Var<T> forward(ForwardState<T>& st, const Var<T>& x) const override { return unit_.forward(st.graph, x); }
    Shape output_shape(const Shape& in, ShapeState&) const override { return unit_.output_shape(in); }
    std::vector<RfPath> paths() const override { return {RfPath{unit_.geometry()}}; }
    std::vector<Parameter<T>*> parameters() const override {
        std::vector<Parameter<T>*> out;
        unit_.collect(out);
        return out;
    }

private:
    ConvUnit<T> unit_;
};

} // namespace layers

/// FPLNet and its ablation variants as an ordered list of layers over one
/// parameter store.
template <typename T>
class Network {
public:
    explicit Network(const NetworkConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng(cfg.seed);
        build_encoder(rng);
        if (cfg.decoder == DecoderKind::sequential)
            build_decoder(rng);
        else
            build_head(rng);
    }

    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    const NetworkConfig& config() const { return cfg_; }
    ParameterStore<T>& store() { return store_; }
    const ParameterStore<T>& store() const { return store_; }
    const std::vector<std::unique_ptr<Layer<T>>>& layers() const { return layers_; }

    void check_input(const Shape& in) const {
        if (in.c != cfg_.image_channels)
            throw ShapeError("network: expected " + std::to_string(cfg_.image_channels) + " input channels, got " +
                             std::to_string(in.c));
        if (in.h % 8 != 0 || in.w % 8 != 0)
            throw ShapeError("network: input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                             " is not divisible by 8");
    }

    /// Output shape of every layer for a given input.
    std::vector<Shape> layer_shapes(const Shape& in) const {
        check_input(in);
        ShapeState st{in, Shape{}};
        std::vector<Shape> out;
        Shape s = in;
        for (const auto& l : layers_) {
            s = l->output_shape(s, st);
            if (l->starts_stage) st.shallow = s;
            out.push_back(s);
        }
        return out;
    }

    Shape output_shape(const Shape& in) const { return layer_shapes(in).back(); }

    Var<T> forward(Graph<T>& g, const Var<T>& image, Mode mode) const {
        check_input(image.shape());
        ForwardState<T> st{g, mode, image, Var<T>()};
        Var<T> x = image;
        for (const auto& l : layers_) {
            x = l->forward(st, x);
            if (l->starts_stage) st.shallow = x;
        }
        return x;
    }

    /// Inference-mode logits without recording a tape.
    Tensor<T> infer(const Tensor<T>& image) const {
        Graph<T> g(false);
        return forward(g, g.input(image), Mode::infer).value();
    }

    /// Per-pixel argmax of the inference logits; ties go to the lowest class.
    LabelMap predict(const Tensor<T>& image) const { return argmax(infer(image)); }

    static LabelMap argmax(const Tensor<T>& logits) {
        const Shape s = logits.shape();
        LabelMap out(s.n, s.h, s.w);
        for (std::size_t n = 0; n < s.n; ++n)
            for (std::size_t i = 0; i < s.plane(); ++i) {
                std::size_t best = 0;
                T bv = logits.plane(n, 0)[i];
                for (std::size_t c = 1; c < s.c; ++c)
                    if (logits.plane(n, c)[i] > bv) bv = logits.plane(n, c)[i], best = c;
                out.data[n * s.plane() + i] = static_cast<std::int32_t>(best);
            }
        return out;
    }

private:
    template <typename L, typename... Args>
    L& push(Args&&... args) {
        auto l = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *l;
        layers_.push_back(std::move(l));
        return ref;
    }

    FplConfig fpl_template() const {
        FplConfig f;
        f.branches = cfg_.branches;
        f.dilations = cfg_.dilations;
        f.fusion = cfg_.module_fusion;
        f.factorize_bank = cfg_.factorization != Factorization::none;
        f.factorize_stage1 = cfg_.factorization == Factorization::all;
        return f;
    }

    /// Downsampler (stride 2) or residual module of the configured kind.
    void push_module(const std::string& stage, const std::string& name, std::size_t c_in, std::size_t c_out, bool down,
                     Rng& rng) {
        if (cfg_.module_kind == ModuleKind::fpl) {
            FplConfig f = fpl_template();
            f.c_in = c_in;
            f.c_out = c_out;
            f.stride = down ? 2 : 1;
            f.residual = !down;
            push<layers::FplLayer<T>>(down ? "Downsample (FPL)" : "FPL module", stage, store_, name, f, rng)
                .starts_stage = down;
        } else {
            EspConfig e = EspConfig::module(c_in, c_out);
            e.stride = down ? 2 : 1;
            e.residual = !down;
            e.split_remainder = true;
            push<layers::EspLayer<T>>(down ? "Downsample (ESP)" : "ESP module", stage, store_, name, e, rng)
                .starts_stage = down;
        }
    }

    void build_encoder(Rng& rng) {
        const std::size_t c1 = cfg_.stage1_channels, img = cfg_.image_channels;
        push<layers::ConvLayer<T>>("Downsample (Conv-3)", "stage1", store_, "encoder.stage1.conv1",
                                   ConvSpec::same(img, c1, 3, 3, 1, 2), rng);
        if (cfg_.downsampling == Downsampling::delayed) {
            push<layers::ConvLayer<T>>("Conv-3", "stage1", store_, "encoder.stage1.conv2", ConvSpec::same(c1, c1, 3, 3), rng);
            push<layers::ConvLayer<T>>("Conv-3", "stage1", store_, "encoder.stage1.conv3", ConvSpec::same(c1, c1, 3, 3), rng);
        }
        push<layers::ImageConcat<T>>("stage1", "encoder.stage1.concat");
        std::size_t c = c1 + img;
        const std::size_t widths[2] = {cfg_.stage2_channels, cfg_.stage3_channels};
        const std::size_t counts[2] = {cfg_.stage2_modules, cfg_.stage3_modules};
        for (int s = 0; s < 2; ++s) {
            const std::string stage = "stage" + std::to_string(s + 2), p = "encoder." + stage;
            push_module(stage, p + ".down", c, widths[s], true, rng);
            for (std::size_t i = 0; i < counts[s]; ++i)
                push_module(stage, p + ".module" + std::to_string(i + 1), widths[s], widths[s], false, rng);
            push<layers::StageFusion<T>>(cfg_.fusion_strategy, stage, p + ".fusion");
            c = fused_channels(cfg_.fusion_strategy, widths[s], img);
        }
        encoder_channels_ = c;
    }

    void build_head(Rng& rng) {
        push<layers::HeadProjection<T>>("head", store_, "head.proj", encoder_channels_, cfg_.num_classes, rng);
        push<layers::BilinearLayer<T>>("head", "head.upsample", 8);
    }

    void build_decoder(Rng& rng) {
        const std::size_t d1 = cfg_.decoder1_channels, d2 = cfg_.decoder2_channels;
        push<layers::ConvLayer<T>>("Projection (Conv-1x1)", "decoder", store_, "decoder.proj",
                                   ConvSpec::same(encoder_channels_, d1, 1, 1), rng);
        push<layers::UpsamplerLayer<T>>("decoder", store_, "decoder.stage1.up", d1, d1, rng);
        for (std::size_t i = 0; i < cfg_.decoder1_modules; ++i)
            push_module("decoder", "decoder.stage1.module" + std::to_string(i + 1), d1, d1, false, rng);
        push<layers::UpsamplerLayer<T>>("decoder", store_, "decoder.stage2.up", d1, d2, rng);
        for (std::size_t i = 0; i < cfg_.decoder2_modules; ++i)
            push_module("decoder", "decoder.stage2.module" + std::to_string(i + 1), d2, d2, false, rng);
        push<layers::DeconvProjection<T>>("decoder", store_, "decoder.classifier", d2, cfg_.num_classes, rng);
    }

    NetworkConfig cfg_;
    ParameterStore<T> store_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    std::size_t encoder_channels_ = 0;
};

template <typename T = float>
std::unique_ptr<Network<T>> build_fplnet(const NetworkConfig& cfg) {
    return std::make_unique<Network<T>>(cfg);
}

/// Ablation names accepted by apply_ablation / build_variant.
inline std::vector<std::string> ablation_names() {
    return {"default",
            "esp",
            "fpl",
            "delayed",
            "hasty",
            "fusion:if",
            "fusion:isff_add",
            "fusion:isff_concat",
            "fusion:if_and_isff_add",
            "fusion:if_and_isff_concat",
            "fusion:fir",
            "factorization:none",
            "factorization:composite",
            "factorization:all",
            "module_fusion:pff",
            "module_fusion:hff",
            "module_fusion:none",
            "encoder_only",
            "stages:<s2>,<s3>"};
}

namespace detail {

inline std::size_t parse_count(const std::string& s, const std::string& what) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("ablation: bad " + what + " '" + s + "'");
    return static_cast<std::size_t>(std::stoul(s));
}

inline std::string join_names() {
    std::string out;
    for (const auto& n : ablation_names()) out += (out.empty() ? "" : ", ") + n;
    return out;
}

} // namespace detail

inline FusionStrategy parse_fusion_strategy(const std::string& s) {
    for (auto f : {FusionStrategy::image, FusionStrategy::isff_add, FusionStrategy::isff_concat,
                   FusionStrategy::if_and_isff_add, FusionStrategy::if_and_isff_concat, FusionStrategy::fir})
        if (s == fusion_strategy_name(f)) return f;
    throw ConfigError("unknown fusion strategy '" + s + "'");
}

inline Factorization parse_factorization(const std::string& s) {
    for (auto f : {Factorization::none, Factorization::composite, Factorization::all})
        if (s == factorization_name(f)) return f;
    throw ConfigError("unknown factorization '" + s + "'");
}

inline Fusion parse_module_fusion(const std::string& s) {
    for (auto f : {Fusion::pff, Fusion::hff, Fusion::none})
        if (s == fusion_name(f)) return f;
    throw ConfigError("unknown module fusion '" + s + "'");
}

/// Applies one named ablation to a base configuration.
inline NetworkConfig apply_ablation(NetworkConfig cfg, const std::string& name) {
    const auto colon = name.find(':');
    const std::string key = name.substr(0, colon), value = colon == std::string::npos ? "" : name.substr(colon + 1);
    try {
        if (name == "default") return cfg;
        if (name == "esp") cfg.module_kind = ModuleKind::esp;
        else if (name == "fpl") cfg.module_kind = ModuleKind::fpl;
        else if (name == "delayed") cfg.downsampling = Downsampling::delayed;
        else if (name == "hasty") cfg.downsampling = Downsampling::hasty;
        else if (name == "encoder_only") cfg.decoder = DecoderKind::encoder_only;
        else if (key == "fusion" && !value.empty()) cfg.fusion_strategy = parse_fusion_strategy(value);
        else if (key == "factorization" && !value.empty()) cfg.factorization = parse_factorization(value);
        else if (key == "module_fusion" && !value.empty()) cfg.module_fusion = parse_module_fusion(value);
        else if (key == "stages" && !value.empty()) {
            const auto comma = value.find(',');
            if (comma == std::string::npos) throw ConfigError("ablation: stages needs '<s2>,<s3>'");
            cfg.stage2_modules = detail::parse_count(value.substr(0, comma), "stage-2 count");
            cfg.stage3_modules = detail::parse_count(value.substr(comma + 1), "stage-3 count");
        } else {
            throw ConfigError("");
        }
    } catch (const ConfigError& e) {
        throw ConfigError("unknown ablation '" + name + "'" + (std::string(e.what()).empty() ? "" : " (" + std::string(e.what()) + ")") +
                          "; valid: " + detail::join_names());
    }
    cfg.validate();
    return cfg;
}

template <typename T = float>
std::unique_ptr<Network<T>> build_variant(const NetworkConfig& base, const std::string& ablation) {
    return build_fplnet<T>(apply_ablation(base, ablation));
}

} // namespace fplnet
