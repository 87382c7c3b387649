#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fplnet/autograd.hpp"
#include "fplnet/conv.hpp"
#include "fplnet/error.hpp"
#include "fplnet/parameters.hpp"

namespace fplnet {

/// How the outputs y_1..y_b of a dilated branch bank are combined before the
/// channel concat.
///  - pff:  z_1 = y_1, z_i = y_i + y_{i-1}
///  - hff:  z_1 = y_1, z_2 = y_2, z_i = z_{i-1} + y_i for i >= 3 (the dense
///          d=1 branch stays out of the hierarchy, as in ESPNet)
///  - none: z_i = y_i
enum class Fusion { pff, hff, none };

inline const char* fusion_name(Fusion f) {
    switch (f) {
        case Fusion::pff: return "pff";
        case Fusion::hff: return "hff";
        case Fusion::none: return "none";
    }
    return "?";
}

/// One convolution of a receptive-field path.
struct KernelGeom {
    std::size_t kh = 1;
    std::size_t kw = 1;
    std::size_t dilation = 1;
    std::size_t stride = 1;
    bool transposed = false;
    /// Bilinear upsampling is modeled as a transposed op touching `kh` inputs.
    bool interpolating = false;
};
using RfPath = std::vector<KernelGeom>;

struct FplConfig {
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::size_t branches = 4;
    std::vector<std::size_t> dilations{1, 2, 4, 8};
    std::size_t kernel = 3;
    bool factorize_bank = true;
    bool factorize_stage1 = false;
    std::size_t stride = 1;
    bool residual = true;
    Fusion fusion = Fusion::pff;

    static FplConfig module(std::size_t c_in, std::size_t c_out) {
        FplConfig c;
        c.c_in = c_in;
        c.c_out = c_out;
        return c;
    }
    static FplConfig downsampler(std::size_t c_in, std::size_t c_out) {
        FplConfig c = module(c_in, c_out);
        c.stride = 2;
        c.residual = false;
        return c;
    }

    std::size_t branch_width() const { return c_out / branches; }
    bool has_residual() const { return residual && stride == 1 && c_in == c_out; }

    void validate() const {
        if (c_in == 0 || c_out == 0) throw ConfigError("fpl: channel counts must be >= 1");
        if (branches == 0) throw ConfigError("fpl: branches must be >= 1");
        if (c_out % branches != 0)
            throw ConfigError("fpl: c_out " + std::to_string(c_out) + " not divisible by branches " +
                              std::to_string(branches));
        if (dilations.size() != branches)
            throw ConfigError("fpl: " + std::to_string(dilations.size()) + " dilation rates for " +
                              std::to_string(branches) + " branches");
        for (std::size_t i = 0; i < dilations.size(); ++i) {
            if (dilations[i] == 0) throw ConfigError("fpl: dilation rates must be >= 1");
            if (i > 0 && dilations[i] <= dilations[i - 1]) throw ConfigError("fpl: dilation rates must strictly increase");
        }
        if (kernel == 0 || kernel % 2 == 0) throw ConfigError("fpl: kernel size must be odd");
        if (stride != 1 && stride != 2) throw ConfigError("fpl: stride must be 1 or 2");
        if (stride == 2 && residual) throw ConfigError("fpl: a stride-2 module cannot be residual");
    }
};

struct EspConfig {
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::size_t branches = 5;
    std::vector<std::size_t> dilations{1, 2, 4, 8, 16};
    std::size_t kernel = 3;
    std::size_t stride = 1;
    bool residual = true;
    Fusion fusion = Fusion::hff;
    /// Allow c_out not divisible by branches; the first (d=1) branch then
    /// takes the remainder channels.
    bool split_remainder = false;

    static EspConfig module(std::size_t c_in, std::size_t c_out) {
        EspConfig c;
        c.c_in = c_in;
        c.c_out = c_out;
        return c;
    }

    std::size_t branch_width() const { return c_out / branches; }
    std::size_t first_branch_width() const { return c_out - (branches - 1) * branch_width(); }
    bool has_residual() const { return residual && stride == 1 && c_in == c_out; }

    void validate() const {
        if (c_in == 0 || c_out == 0) throw ConfigError("esp: channel counts must be >= 1");
        if (branches == 0) throw ConfigError("esp: branches must be >= 1");
        if (!split_remainder && c_out % branches != 0)
            throw ConfigError("esp: c_out " + std::to_string(c_out) + " not divisible by branches " +
                              std::to_string(branches));
        if (branch_width() == 0) throw ConfigError("esp: fewer output channels than branches");
        if (dilations.size() != branches) throw ConfigError("esp: dilation count must equal branches");
        for (std::size_t i = 1; i < dilations.size(); ++i)
            if (dilations[i] <= dilations[i - 1]) throw ConfigError("esp: dilation rates must strictly increase");
        if (kernel == 0 || kernel % 2 == 0) throw ConfigError("esp: kernel size must be odd");
        if (stride != 1 && stride != 2) throw ConfigError("esp: stride must be 1 or 2");
        if (stride == 2 && residual) throw ConfigError("esp: a stride-2 module cannot be residual");
        if (fusion == Fusion::pff && first_branch_width() != branch_width())
            throw ConfigError("esp: pairwise fusion needs equal branch widths");
    }
};

/// A single convolution (or transposed convolution) with its weights.
template <typename T>
class ConvUnit {
public:
    ConvUnit() = default;
    ConvUnit(ParameterStore<T>& store, const std::string& prefix, const ConvSpec& spec, Rng& rng,
             bool transposed = false)
        : spec_(spec), transposed_(transposed) {
        spec.validate(prefix.c_str());
        Tensor<T> w(transposed ? spec.transposed_weight_shape() : spec.conv_weight_shape());
        const std::size_t fan_in =
            transposed ? std::max<std::size_t>(1, spec.c_in * spec.kernel_h * spec.kernel_w / (spec.stride * spec.stride))
                       : spec.c_in * spec.kernel_h * spec.kernel_w;
        kaiming_uniform(w, fan_in, rng);
        weight_ = &store.add(prefix + ".weight", std::move(w), ParamRole::conv_weight);
        if (spec.has_bias) bias_ = &store.add(prefix + ".bias", Tensor<T>(Shape{1, spec.c_out, 1, 1}), ParamRole::bias);
    }

    Var<T> forward(Graph<T>& g, const Var<T>& x) const {
        Var<T> b = bias_ ? g.param(*bias_) : Var<T>();
        if (transposed_) return ag::transposed_conv2d(g, x, g.param(*weight_), b, spec_);
        return ag::conv2d(g, x, g.param(*weight_), b, spec_);
    }

    Shape output_shape(const Shape& in) const {
        if (in.c != spec_.c_in)
            throw ShapeError("conv: input channels " + std::to_string(in.c) + " != c_in " + std::to_string(spec_.c_in));
        return transposed_ ? transposed_conv2d_output_shape(in, spec_) : conv2d_output_shape(in, spec_);
    }

    KernelGeom geometry() const {
        return KernelGeom{spec_.kernel_h, spec_.kernel_w, spec_.dilation, spec_.stride, transposed_, false};
    }

    const ConvSpec& spec() const { return spec_; }
    void collect(std::vector<Parameter<T>*>& out) const {
        out.push_back(weight_);
        if (bias_) out.push_back(bias_);
    }

private:
    ConvSpec spec_{};
    bool transposed_ = false;
    Parameter<T>* weight_ = nullptr;
    Parameter<T>* bias_ = nullptr;
};

/// Batch normalization followed by a per-channel PReLU.
template <typename T>
class BnAct {
public:
    BnAct() = default;
    BnAct(ParameterStore<T>& store, const std::string& prefix, std::size_t channels) {
        const Shape s{1, channels, 1, 1};
        gamma_ = &store.add(prefix + ".bn.gamma", Tensor<T>(s, T(1)), ParamRole::bn_gamma);
        beta_ = &store.add(prefix + ".bn.beta", Tensor<T>(s, T(0)), ParamRole::bn_beta);
        mean_ = &store.add(prefix + ".bn.running_mean", Tensor<T>(s, T(0)), ParamRole::running_mean);
        var_ = &store.add(prefix + ".bn.running_var", Tensor<T>(s, T(1)), ParamRole::running_var);
        slope_ = &store.add(prefix + ".act.slope", Tensor<T>(s, T(0.25)), ParamRole::prelu_slope);
    }

    Var<T> forward(Graph<T>& g, const Var<T>& x, Mode mode) const {
        Var<T> y = ag::batch_norm(g, x, g.param(*gamma_), g.param(*beta_), *mean_, *var_, mode);
        return ag::prelu(g, y, g.param(*slope_));
    }

    void collect(std::vector<Parameter<T>*>& out) const {
        for (auto* p : {gamma_, beta_, mean_, var_, slope_}) out.push_back(p);
    }

private:
    Parameter<T>* gamma_ = nullptr;
    Parameter<T>* beta_ = nullptr;
    Parameter<T>* mean_ = nullptr;
    Parameter<T>* var_ = nullptr;
    Parameter<T>* slope_ = nullptr;
};

/// conv -> BN -> PReLU.
template <typename T>
class ConvBnAct {
public:
    ConvBnAct() = default;
    ConvBnAct(ParameterStore<T>& store, const std::string& prefix, const ConvSpec& spec, Rng& rng,
              bool transposed = false)
        : conv_(store, prefix + ".conv", spec, rng, transposed), act_(store, prefix, spec.c_out) {}

    Var<T> forward(Graph<T>& g, const Var<T>& x, Mode mode) const { return act_.forward(g, conv_.forward(g, x), mode); }
    Shape output_shape(const Shape& in) const { return conv_.output_shape(in); }
    KernelGeom geometry() const { return conv_.geometry(); }
    void collect(std::vector<Parameter<T>*>& out) const {
        conv_.collect(out);
        act_.collect(out);
    }

private:
    ConvUnit<T> conv_;
    BnAct<T> act_;
};

namespace detail {

template <typename T>
std::vector<Var<T>> fuse_branches(Graph<T>& g, const std::vector<Var<T>>& ys, Fusion fusion) {
    std::vector<Var<T>> zs(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) {
        switch (fusion) {
            case Fusion::none: zs[i] = ys[i]; break;
            case Fusion::pff: zs[i] = i == 0 ? ys[i] : ag::add(g, ys[i], ys[i - 1]); break;
            case Fusion::hff: zs[i] = i < 2 ? ys[i] : ag::add(g, zs[i - 1], ys[i]); break;
        }
    }
    return zs;
}

} // namespace detail

/// Factorized pyramidal learning module.
///
///   x -> 1x1 reduce (C_i -> C_o/b)
///     -> stage 1: symmetric kxk conv (carries the stride), BN+PReLU
///     -> stage 2: b parallel branches, each kx1 (dilation d_i), BN+PReLU, 1xk (d_i)
///     -> branch fusion (PFF by default) -> concat to C_o
///     -> (+ x when residual) -> BN+PReLU
///
/// With factorize_bank=false each branch is a single kxk dilated conv; with
/// factorize_stage1=true stage 1 is itself split into kx1, BN+PReLU, 1xk.
template <typename T>
class FplBlock {
public:
    FplBlock(ParameterStore<T>& store, const std::string& prefix, const FplConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        const std::size_t n = cfg.branch_width(), k = cfg.kernel;
        reduce_ = ConvUnit<T>(store, prefix + ".reduce", ConvSpec::same(cfg.c_in, n, 1, 1), rng);
        if (cfg.factorize_stage1) {
            stage1_a_ = ConvUnit<T>(store, prefix + ".stage1.a", ConvSpec::same(n, n, k, 1, 1, cfg.stride), rng);
            stage1_mid_ = std::make_unique<BnAct<T>>(store, prefix + ".stage1.mid", n);
            stage1_b_ = ConvUnit<T>(store, prefix + ".stage1.b", ConvSpec::same(n, n, 1, k), rng);
        } else {
            stage1_a_ = ConvUnit<T>(store, prefix + ".stage1", ConvSpec::same(n, n, k, k, 1, cfg.stride), rng);
        }
        stage1_act_ = BnAct<T>(store, prefix + ".stage1", n);
        for (std::size_t i = 0; i < cfg.branches; ++i) {
            const std::string bp = prefix + ".branch" + std::to_string(i + 1);
            const std::size_t d = cfg.dilations[i];
            Branch br;
            if (cfg.factorize_bank) {
                br.first = ConvUnit<T>(store, bp + ".kx1", ConvSpec::same(n, n, k, 1, d), rng);
                br.mid = std::make_unique<BnAct<T>>(store, bp + ".mid", n);
                br.second = ConvUnit<T>(store, bp + ".1xk", ConvSpec::same(n, n, 1, k, d), rng);
            } else {
                br.first = ConvUnit<T>(store, bp + ".kxk", ConvSpec::same(n, n, k, k, d), rng);
            }
            branches_.push_back(std::move(br));
        }
        out_act_ = BnAct<T>(store, prefix + ".out", cfg.c_out);
    }

    Var<T> forward(Graph<T>& g, const Var<T>& x, Mode mode) const {
        if (x.shape().c != cfg_.c_in)
            throw ShapeError("fpl: input channels " + std::to_string(x.shape().c) + " != c_in " +
                             std::to_string(cfg_.c_in));
        Var<T> s = stage1_a_.forward(g, reduce_.forward(g, x));
        if (stage1_mid_) s = stage1_b_.forward(g, stage1_mid_->forward(g, s, mode));
        s = stage1_act_.forward(g, s, mode);
        std::vector<Var<T>> ys;
        for (const auto& br : branches_) {
            Var<T> y = br.first.forward(g, s);
            if (br.mid) y = br.second.forward(g, br.mid->forward(g, y, mode));
            ys.push_back(y);
        }
        Var<T> out = ag::concat(g, detail::fuse_branches(g, ys, cfg_.fusion));
        if (cfg_.has_residual()) out = ag::add(g, out, x);
        return out_act_.forward(g, out, mode);
    }

    Shape output_shape(const Shape& in) const {
        Shape s = reduce_.output_shape(in);
        s = stage1_a_.output_shape(s);
        if (stage1_mid_) s = stage1_b_.output_shape(s);
        return Shape{s.n, cfg_.c_out, s.h, s.w};
    }

    /// One path per branch; the residual path is an identity and never the longest.
    std::vector<RfPath> paths() const {
        std::vector<RfPath> out;
        RfPath head{reduce_.geometry(), stage1_a_.geometry()};
        if (stage1_mid_) head.push_back(stage1_b_.geometry());
        for (const auto& br : branches_) {
            RfPath p = head;
            p.push_back(br.first.geometry());
            if (br.mid) p.push_back(br.second.geometry());
            out.push_back(std::move(p));
        }
        return out;
    }

    std::vector<Parameter<T>*> parameters() const {
        std::vector<Parameter<T>*> out;
        reduce_.collect(out);
        stage1_a_.collect(out);
        if (stage1_mid_) {
            stage1_mid_->collect(out);
            stage1_b_.collect(out);
        }
        stage1_act_.collect(out);
        for (const auto& br : branches_) {
            br.first.collect(out);
            if (br.mid) {
                br.mid->collect(out);
                br.second.collect(out);
            }
        }
        out_act_.collect(out);
        return out;
    }

    const FplConfig& config() const { return cfg_; }

private:
    struct Branch {
        ConvUnit<T> first;
        std::unique_ptr<BnAct<T>> mid;
        ConvUnit<T> second;
    };

    FplConfig cfg_;
    ConvUnit<T> reduce_;
    ConvUnit<T> stage1_a_;
    std::unique_ptr<BnAct<T>> stage1_mid_;
    ConvUnit<T> stage1_b_;
    BnAct<T> stage1_act_;
    std::vector<Branch> branches_;
    BnAct<T> out_act_;
};

/// ESP module: reduce to C_o/b channels (1x1, or kxk stride 2 when
/// downsampling), b parallel dilated kxk convs, hierarchical fusion, concat,
/// optional residual, BN+PReLU.
template <typename T>
class EspBlock {
public:
    EspBlock(ParameterStore<T>& store, const std::string& prefix, const EspConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        const std::size_t n = cfg.branch_width(), n1 = cfg.first_branch_width(), k = cfg.kernel;
        const ConvSpec red = cfg.stride == 1 ? ConvSpec::same(cfg.c_in, n, 1, 1)
                                             : ConvSpec::same(cfg.c_in, n, k, k, 1, cfg.stride);
        reduce_ = ConvUnit<T>(store, prefix + ".reduce", red, rng);
        for (std::size_t i = 0; i < cfg.branches; ++i)
            branches_.emplace_back(store, prefix + ".branch" + std::to_string(i + 1),
                                   ConvSpec::same(n, i == 0 ? n1 : n, k, k, cfg.dilations[i]), rng);
        out_act_ = BnAct<T>(store, prefix + ".out", cfg.c_out);
    }

    Var<T> forward(Graph<T>& g, const Var<T>& x, Mode mode) const {
        if (x.shape().c != cfg_.c_in)
            throw ShapeError("esp: input channels " + std::to_string(x.shape().c) + " != c_in " +
                             std::to_string(cfg_.c_in));
        Var<T> r = reduce_.forward(g, x);
        std::vector<Var<T>> ys;
        for (const auto& br : branches_) ys.push_back(br.forward(g, r));
        Var<T> out = ag::concat(g, detail::fuse_branches(g, ys, cfg_.fusion));
        if (cfg_.has_residual()) out = ag::add(g, out, x);
        return out_act_.forward(g, out, mode);
    }

    Shape output_shape(const Shape& in) const {
        const Shape s = reduce_.output_shape(in);
        return Shape{s.n, cfg_.c_out, s.h, s.w};
    }

    std::vector<RfPath> paths() const {
        std::vector<RfPath> out;
        for (const auto& br : branches_) out.push_back(RfPath{reduce_.geometry(), br.geometry()});
        return out;
    }

    std::vector<Parameter<T>*> parameters() const {
        std::vector<Parameter<T>*> out;
        reduce_.collect(out);
        for (const auto& br : branches_) br.collect(out);
        out_act_.collect(out);
        return out;
    }

    const EspConfig& config() const { return cfg_; }

private:
    EspConfig cfg_;
    ConvUnit<T> reduce_;
    std::vector<ConvUnit<T>> branches_;
    BnAct<T> out_act_;
};

/// Feature-image reinforcement: concat(deep + shallow, deep, image).
/// No parameters; output has 2c + image channels.
template <typename T>
Var<T> fir_forward(Graph<T>& g, const Var<T>& deep, const Var<T>& shallow, const Var<T>& image) {
    if (deep.shape() != shallow.shape())
        throw ShapeError("fir: deep " + deep.shape().str() + " and shallow " + shallow.shape().str() + " differ");
    const Shape d = deep.shape(), im = image.shape();
    if (im.n != d.n || im.h != d.h || im.w != d.w)
        throw ShapeError("fir: image " + im.str() + " not spatially matched to features " + d.str());
    return ag::concat(g, {ag::add(g, deep, shallow), deep, image});
}

/// Stage 1 of the encoder: stride-2 kxk conv to `width` channels, two more
/// kxk convs at that width, then concat with the 2x mean-pooled image.
template <typename T>
class InitialModule {
public:
    InitialModule(ParameterStore<T>& store, const std::string& prefix, std::size_t width, Rng& rng,
                  std::size_t extra_convs = 2, std::size_t image_channels = 3)
        : image_channels_(image_channels) {
        down_ = ConvBnAct<T>(store, prefix + ".conv1", ConvSpec::same(image_channels, width, 3, 3, 1, 2), rng);
        for (std::size_t i = 0; i < extra_convs; ++i)
            convs_.emplace_back(store, prefix + ".conv" + std::to_string(i + 2), ConvSpec::same(width, width, 3, 3), rng);
    }

    Var<T> forward(Graph<T>& g, const Var<T>& image, Mode mode) const {
        if (image.shape().c != image_channels_)
            throw ShapeError("initial module: expected " + std::to_string(image_channels_) + " image channels, got " +
                             std::to_string(image.shape().c));
        Var<T> x = down_.forward(g, image, mode);
        for (const auto& c : convs_) x = c.forward(g, x, mode);
        return ag::concat(g, {x, ag::avg_pool(g, image, 2)});
    }

    std::vector<Parameter<T>*> parameters() const {
        std::vector<Parameter<T>*> out;
        down_.collect(out);
        for (const auto& c : convs_) c.collect(out);
        return out;
    }

private:
    std::size_t image_channels_;
    ConvBnAct<T> down_;
    std::vector<ConvBnAct<T>> convs_;
};

/// 2x upsampler: kernel-2 stride-2 transposed conv, BN, PReLU.
template <typename T>
class Upsampler {
public:
    Upsampler() = default;
    Upsampler(ParameterStore<T>& store, const std::string& prefix, std::size_t c_in, std::size_t c_out, Rng& rng)
        : unit_(store, prefix, ConvSpec{c_in, c_out, 2, 2, 2, 1, 0, 0, false}, rng, true) {}

    Var<T> forward(Graph<T>& g, const Var<T>& x, Mode mode) const { return unit_.forward(g, x, mode); }
    Shape output_shape(const Shape& in) const { return unit_.output_shape(in); }
    KernelGeom geometry() const { return unit_.geometry(); }
    void collect(std::vector<Parameter<T>*>& out) const { unit_.collect(out); }

private:
    ConvBnAct<T> unit_;
};

/// One decoder stage: a 2x upsampler followed by `modules` FPL modules at the
/// upsampler's width.
template <typename T>
class DecoderStage {
public:
    DecoderStage(ParameterStore<T>& store, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                 std::size_t modules, const FplConfig& module_template, Rng& rng)
        : up_(store, prefix + ".up", c_in, c_out, rng) {
        for (std::size_t i = 0; i < modules; ++i) {
            FplConfig c = module_template;
            c.c_in = c.c_out = c_out;
            c.stride = 1;
            c.residual = true;
            fpls_.emplace_back(store, prefix + ".fpl" + std::to_string(i + 1), c, rng);
        }
    }

    Var<T> forward(Graph<T>& g, const Var<T>& x, Mode mode) const {
        Var<T> y = up_.forward(g, x, mode);
        for (const auto& f : fpls_) y = f.forward(g, y, mode);
        return y;
    }

    std::vector<Parameter<T>*> parameters() const {
        std::vector<Parameter<T>*> out;
        up_.collect(out);
        for (const auto& f : fpls_) {
            auto p = f.parameters();
            out.insert(out.end(), p.begin(), p.end());
        }
        return out;
    }

private:
    Upsampler<T> up_;
    std::vector<FplBlock<T>> fpls_;
};

} // namespace fplnet
