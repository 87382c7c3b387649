#pragma once

#include <cstddef>
#include <string>

#include "fplnet/error.hpp"
#include "fplnet/tensor.hpp"

namespace fplnet {

/// Hyperparameters of one (possibly dilated, strided, asymmetric) convolution.
/// Convolution is cross-correlation: no kernel flip.
struct ConvSpec {
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
    bool has_bias = false;

    /// Padding d*(k-1)/2 per axis, which keeps the spatial size at stride 1.
    static ConvSpec same(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw,
                         std::size_t dilation = 1, std::size_t stride = 1, bool bias = false) {
        return ConvSpec{c_in, c_out, kh, kw, stride, dilation, dilation * (kh - 1) / 2, dilation * (kw - 1) / 2, bias};
    }

    std::size_t footprint_h() const { return dilation * (kernel_h - 1) + 1; }
    std::size_t footprint_w() const { return dilation * (kernel_w - 1) + 1; }
    std::size_t weight_count() const { return c_in * c_out * kernel_h * kernel_w; }

    void validate(const char* what) const {
        if (c_in == 0 || c_out == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 || dilation == 0)
            throw ConfigError(std::string(what) + ": channels, kernel, stride and dilation must be >= 1");
    }

    Shape conv_weight_shape() const { return Shape{c_out, c_in, kernel_h, kernel_w}; }
    Shape transposed_weight_shape() const { return Shape{c_in, c_out, kernel_h, kernel_w}; }

    std::size_t conv_out_h(std::size_t in) const { return conv_out(in, pad_h, footprint_h(), "height"); }
    std::size_t conv_out_w(std::size_t in) const { return conv_out(in, pad_w, footprint_w(), "width"); }
    std::size_t transposed_out_h(std::size_t in) const { return transposed_out(in, pad_h, footprint_h(), "height"); }
    std::size_t transposed_out_w(std::size_t in) const { return transposed_out(in, pad_w, footprint_w(), "width"); }

private:
    std::size_t conv_out(std::size_t in, std::size_t pad, std::size_t footprint, const char* axis) const {
        if (footprint > in + 2 * pad)
            throw ShapeError(std::string("conv2d: dilated footprint ") + std::to_string(footprint) +
                             " exceeds padded input " + axis + " " + std::to_string(in + 2 * pad));
        return (in + 2 * pad - footprint) / stride + 1;
    }
    std::size_t transposed_out(std::size_t in, std::size_t pad, std::size_t footprint, const char* axis) const {
        const std::size_t full = (in - 1) * stride + footprint;
        if (full <= 2 * pad)
            throw ShapeError(std::string("transposed_conv2d: padding removes the whole output ") + axis);
        return full - 2 * pad;
    }
};

namespace detail {

/// Range [lo, hi) of output positions o with o*stride + offset inside [0, in_size).
inline void valid_range(long offset, std::size_t stride, std::size_t in_size, std::size_t out_size, std::size_t& lo,
                        std::size_t& hi) {
    const long s = static_cast<long>(stride);
    long first = 0;
    if (offset < 0) first = (-offset + s - 1) / s;
    const long last_in = static_cast<long>(in_size) - 1 - offset;
    long end = last_in < 0 ? 0 : last_in / s + 1;
    if (end > static_cast<long>(out_size)) end = static_cast<long>(out_size);
    if (first > end) first = end;
    lo = static_cast<std::size_t>(first);
    hi = static_cast<std::size_t>(end);
}

/// Loop geometry shared by the three convolution kernels. "src" is the
/// convolution input side, "dst" is the convolution output side.
struct ConvGeometry {
    std::size_t batch, c_src, c_dst;
    std::size_t src_h, src_w, dst_h, dst_w;
    std::size_t kh, kw, stride, dilation, pad_h, pad_w;

    long off_h(std::size_t ky) const { return static_cast<long>(ky * dilation) - static_cast<long>(pad_h); }
    long off_w(std::size_t kx) const { return static_cast<long>(kx * dilation) - static_cast<long>(pad_w); }
};

/// dst[n,co] += sum_ci W[co,ci] (*) src[n,ci]; W laid out (c_dst, c_src, kh, kw).
template <typename T>
void correlate(const T* src, const T* weights, T* dst, const ConvGeometry& g) {
    const std::size_t src_plane = g.src_h * g.src_w, dst_plane = g.dst_h * g.dst_w;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.c_dst; ++co) {
            T* out = dst + (n * g.c_dst + co) * dst_plane;
            for (std::size_t ci = 0; ci < g.c_src; ++ci) {
                const T* in = src + (n * g.c_src + ci) * src_plane;
                const T* wk = weights + (co * g.c_src + ci) * g.kh * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    std::size_t oy0, oy1;
                    valid_range(g.off_h(ky), g.stride, g.src_h, g.dst_h, oy0, oy1);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const T wv = wk[ky * g.kw + kx];
                        if (wv == T(0)) continue;
                        std::size_t ox0, ox1;
                        valid_range(g.off_w(kx), g.stride, g.src_w, g.dst_w, ox0, ox1);
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const long iy = static_cast<long>(oy * g.stride) + g.off_h(ky);
                            const T* irow = in + static_cast<std::size_t>(iy) * g.src_w;
                            T* orow = out + oy * g.dst_w;
                            if (g.stride == 1) {
                                const T* ip = irow + g.off_w(kx);
                                for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * ip[ox];
                            } else {
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    orow[ox] += wv * irow[static_cast<long>(ox * g.stride) + g.off_w(kx)];
                            }
                        }
                    }
                }
            }
        }
}

/// src[n,ci] += sum_co W[co,ci] scattered from dst[n,co]; the adjoint of correlate.
template <typename T>
void scatter(const T* dst, const T* weights, T* src, const ConvGeometry& g) {
    const std::size_t src_plane = g.src_h * g.src_w, dst_plane = g.dst_h * g.dst_w;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.c_dst; ++co) {
            const T* gout = dst + (n * g.c_dst + co) * dst_plane;
            for (std::size_t ci = 0; ci < g.c_src; ++ci) {
                T* gin = src + (n * g.c_src + ci) * src_plane;
                const T* wk = weights + (co * g.c_src + ci) * g.kh * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    std::size_t oy0, oy1;
                    valid_range(g.off_h(ky), g.stride, g.src_h, g.dst_h, oy0, oy1);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const T wv = wk[ky * g.kw + kx];
                        if (wv == T(0)) continue;
                        std::size_t ox0, ox1;
                        valid_range(g.off_w(kx), g.stride, g.src_w, g.dst_w, ox0, ox1);
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const long iy = static_cast<long>(oy * g.stride) + g.off_h(ky);
                            T* irow = gin + static_cast<std::size_t>(iy) * g.src_w;
                            const T* orow = gout + oy * g.dst_w;
                            if (g.stride == 1) {
                                T* ip = irow + g.off_w(kx);
                                for (std::size_t ox = ox0; ox < ox1; ++ox) ip[ox] += wv * orow[ox];
                            } else {
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    irow[static_cast<long>(ox * g.stride) + g.off_w(kx)] += wv * orow[ox];
                            }
                        }
                    }
                }
            }
        }
}

/// gW[co,ci] += sum over batch and positions of dst_grad[n,co] * src[n,ci] at the tap.
template <typename T>
void weight_gradient(const T* src, const T* dst_grad, T* grad_w, const ConvGeometry& g) {
    const std::size_t src_plane = g.src_h * g.src_w, dst_plane = g.dst_h * g.dst_w;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.c_dst; ++co) {
            const T* gout = dst_grad + (n * g.c_dst + co) * dst_plane;
            for (std::size_t ci = 0; ci < g.c_src; ++ci) {
                const T* in = src + (n * g.c_src + ci) * src_plane;
                T* gw = grad_w + (co * g.c_src + ci) * g.kh * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    std::size_t oy0, oy1;
                    valid_range(g.off_h(ky), g.stride, g.src_h, g.dst_h, oy0, oy1);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        std::size_t ox0, ox1;
                        valid_range(g.off_w(kx), g.stride, g.src_w, g.dst_w, ox0, ox1);
                        T acc = 0;
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const long iy = static_cast<long>(oy * g.stride) + g.off_h(ky);
                            const T* irow = in + static_cast<std::size_t>(iy) * g.src_w;
                            const T* orow = gout + oy * g.dst_w;
                            if (g.stride == 1) {
                                const T* ip = irow + g.off_w(kx);
                                for (std::size_t ox = ox0; ox < ox1; ++ox) acc += orow[ox] * ip[ox];
                            } else {
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    acc += orow[ox] * irow[static_cast<long>(ox * g.stride) + g.off_w(kx)];
                            }
                        }
                        gw[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
}

template <typename T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
    const Shape s = out.shape();
    if (bias.size() != s.c)
        throw ShapeError("bias length " + std::to_string(bias.size()) + " != output channels " + std::to_string(s.c));
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            T* p = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) p[i] += bias[c];
        }
}

template <typename T>
void check_conv_operands(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec, const char* what,
                         bool transposed) {
    spec.validate(what);
    const Shape expected_w = transposed ? spec.transposed_weight_shape() : spec.conv_weight_shape();
    const Shape ws = weights.shape();
    const char* names[] = {transposed ? "c_in" : "c_out", transposed ? "c_out" : "c_in", "kernel_h", "kernel_w"};
    const std::size_t got[] = {ws.n, ws.c, ws.h, ws.w};
    const std::size_t want[] = {expected_w.n, expected_w.c, expected_w.h, expected_w.w};
    for (int i = 0; i < 4; ++i)
        if (got[i] != want[i])
            throw ShapeError(std::string(what) + ": weight dim " + names[i] + " is " + std::to_string(got[i]) +
                             ", expected " + std::to_string(want[i]));
    if (input.shape().c != spec.c_in)
        throw ShapeError(std::string(what) + ": input channels " + std::to_string(input.shape().c) +
                         " != spec c_in " + std::to_string(spec.c_in));
}

inline ConvGeometry conv_geometry(const ConvSpec& spec, std::size_t batch, std::size_t in_h, std::size_t in_w,
                                  std::size_t out_h, std::size_t out_w) {
    return ConvGeometry{batch,       spec.c_in,     spec.c_out,    in_h,         in_w,       out_h,      out_w,
                        spec.kernel_h, spec.kernel_w, spec.stride, spec.dilation, spec.pad_h, spec.pad_w};
}

/// Geometry of a transposed convolution seen as the adjoint of a conv running
/// from its output (src side) back to its input (dst side).
inline ConvGeometry transposed_geometry(const ConvSpec& spec, std::size_t batch, std::size_t in_h, std::size_t in_w,
                                        std::size_t out_h, std::size_t out_w) {
    return ConvGeometry{batch,       spec.c_out,    spec.c_in,     out_h,        out_w,      in_h,       in_w,
                        spec.kernel_h, spec.kernel_w, spec.stride, spec.dilation, spec.pad_h, spec.pad_w};
}

} // namespace detail

/// Output shape of conv2d for a given input shape.
inline Shape conv2d_output_shape(const Shape& in, const ConvSpec& spec) {
    return Shape{in.n, spec.c_out, spec.conv_out_h(in.h), spec.conv_out_w(in.w)};
}

inline Shape transposed_conv2d_output_shape(const Shape& in, const ConvSpec& spec) {
    return Shape{in.n, spec.c_out, spec.transposed_out_h(in.h), spec.transposed_out_w(in.w)};
}

/// Cross-correlation with zero padding. weights: (c_out, c_in, kh, kw).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec,
                 const Tensor<T>* bias = nullptr) {
    detail::check_conv_operands(input, weights, spec, "conv2d", false);
    const Shape in = input.shape();
    Tensor<T> out(conv2d_output_shape(in, spec));
    const auto g = detail::conv_geometry(spec, in.n, in.h, in.w, out.shape().h, out.shape().w);
    detail::correlate(input.ptr(), weights.ptr(), out.ptr(), g);
    if (spec.has_bias && bias) detail::add_bias(out, *bias);
    return out;
}

/// Reference convolution: explicit loops over every output element and every
/// tap with a bounds test. No layout tricks; ground truth for conv2d.
template <typename T>
Tensor<T> conv2d_oracle(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec,
                        const Tensor<T>* bias = nullptr) {
    detail::check_conv_operands(input, weights, spec, "conv2d_oracle", false);
    const Shape in = input.shape();
    Tensor<T> out(conv2d_output_shape(in, spec));
    const Shape os = out.shape();
    for (std::size_t n = 0; n < os.n; ++n)
        for (std::size_t co = 0; co < os.c; ++co)
            for (std::size_t oy = 0; oy < os.h; ++oy)
                for (std::size_t ox = 0; ox < os.w; ++ox) {
                    T acc = (spec.has_bias && bias) ? (*bias)[co] : T(0);
                    for (std::size_t ci = 0; ci < spec.c_in; ++ci)
                        for (std::size_t ky = 0; ky < spec.kernel_h; ++ky)
                            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                                const long iy = static_cast<long>(oy * spec.stride + ky * spec.dilation) -
                                                static_cast<long>(spec.pad_h);
                                const long ix = static_cast<long>(ox * spec.stride + kx * spec.dilation) -
                                                static_cast<long>(spec.pad_w);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w))
                                    continue;
                                acc += weights(co, ci, ky, kx) * input(n, ci, static_cast<std::size_t>(iy),
                                                                        static_cast<std::size_t>(ix));
                            }
                    out(n, co, oy, ox) = acc;
                }
    return out;
}

/// Transposed convolution ("deconvolution"). weights: (c_in, c_out, kh, kw),
/// i.e. the same tensor a conv2d from c_out to c_in channels would use, so
/// transposed_conv2d is exactly the adjoint of that conv2d.
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec,
                            const Tensor<T>* bias = nullptr) {
    detail::check_conv_operands(input, weights, spec, "transposed_conv2d", true);
    const Shape in = input.shape();
    Tensor<T> out(transposed_conv2d_output_shape(in, spec));
    const auto g = detail::transposed_geometry(spec, in.n, in.h, in.w, out.shape().h, out.shape().w);
    detail::scatter(input.ptr(), weights.ptr(), out.ptr(), g);
    if (spec.has_bias && bias) detail::add_bias(out, *bias);
    return out;
}

} // namespace fplnet
