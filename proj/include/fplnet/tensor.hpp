#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fplnet/error.hpp"

namespace fplnet {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

/// (batch, channels, height, width).
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t size() const { return n * c * h * w; }
    constexpr std::size_t plane() const { return h * w; }
    constexpr bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

/// Dense NCHW feature array. A default-constructed tensor is empty and acts as
/// an "unset" marker; any constructed tensor has all dims >= 1.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
        if (!shape.valid()) throw ShapeError("tensor dims must all be >= 1, got " + shape.str());
        data_.assign(shape.size(), fill);
    }

    Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
        : Tensor(Shape{n, c, h, w}, fill) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        if (!shape.valid()) throw ShapeError("tensor dims must all be >= 1, got " + shape.str());
        if (data_.size() != shape.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " != " +
                             std::to_string(shape.size()) + " for shape " + shape.str());
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }

    std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[index(n, c, h, w)];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Pointer to the start of plane (n, c).
    T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
    const T* plane(std::size_t n, std::size_t c) const {
        return data_.data() + (n * shape_.c + c) * shape_.plane();
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data().begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    std::vector<T> data_;
};

/// Per-pixel integer class map, (n, h, w) row-major.
struct LabelMap {
    static constexpr std::int32_t kIgnore = 255;

    std::size_t n = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::int32_t> data;

    LabelMap() = default;
    LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::int32_t fill = 0)
        : n(n_), h(h_), w(w_), data(n_ * h_ * w_, fill) {}

    std::size_t size() const { return data.size(); }
    std::int32_t& operator()(std::size_t b, std::size_t y, std::size_t x) { return data[(b * h + y) * w + x]; }
    std::int32_t operator()(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * h + y) * w + x]; }

    friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

/// Copies channels [begin, begin+count) into a new tensor.
template <typename T>
Tensor<T> channel_slice(const Tensor<T>& x, std::size_t begin, std::size_t count) {
    const Shape s = x.shape();
    if (count == 0 || begin + count > s.c)
        throw ShapeError("channel_slice: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") exceeds channel count " + std::to_string(s.c));
    Tensor<T> out(Shape{s.n, count, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < count; ++c)
            std::copy_n(x.plane(n, begin + c), s.plane(), out.plane(n, c));
    return out;
}

/// Sum over all elements of a*b.
template <typename T>
double inner_product(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "inner_product");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

} // namespace fplnet
