#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fplnet/error.hpp"
#include "fplnet/ops.hpp"
#include "fplnet/parameters.hpp"
#include "fplnet/tensor.hpp"

namespace fplnet {

/// One image (1, 3, H, W) in [0, 1] with its (1, H, W) label map.
struct Sample {
    Tensor<float> image;
    LabelMap label;

    std::size_t height() const { return label.h; }
    std::size_t width() const { return label.w; }
};

// ---------------------------------------------------------------------------
// Synthetic shapes

struct SynthSpec {
    std::size_t num_classes = 3;
    std::size_t height = 64;
    std::size_t width = 128;
    std::size_t count = 200;
    /// Shapes painted per foreground class per image.
    std::size_t min_shapes = 1;
    std::size_t max_shapes = 3;
    /// Standard deviation of additive pixel noise.
    double noise = 0.05;
    /// Target pixel frequency of classes 1..num_classes-1; class 0 is the
    /// background and takes the remainder. Empty means equal shares of 1/C.
    std::vector<double> profile;
    std::uint64_t seed = 1;

    /// Target frequency of every class including the background.
    std::vector<double> frequencies() const {
        std::vector<double> f(num_classes, 0.0);
        double fg = 0.0;
        for (std::size_t k = 1; k < num_classes; ++k) {
            f[k] = profile.empty() ? 1.0 / static_cast<double>(num_classes) : profile[k - 1];
            fg += f[k];
        }
        f[0] = 1.0 - fg;
        return f;
    }

    void validate() const {
        if (num_classes < 2) throw ConfigError("synth: need at least 2 classes");
        if (num_classes > 255) throw ConfigError("synth: at most 255 classes");
        if (height < 8 || width < 8) throw ConfigError("synth: image must be at least 8x8");
        if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("synth: need 1 <= min_shapes <= max_shapes");
        if (noise < 0.0) throw ConfigError("synth: noise must be >= 0");
        if (!profile.empty() && profile.size() != num_classes - 1)
            throw ConfigError("synth: profile needs " + std::to_string(num_classes - 1) + " foreground frequencies");
        double sum = 0.0;
        for (double p : profile) {
            if (p < 0.0) throw ConfigError("synth: profile frequencies must be >= 0");
            sum += p;
        }
        if (sum > 1.0 + 1e-12) throw ConfigError("synth: profile sums to more than 1");
    }
};

namespace detail {

/// Deterministic, well-separated base color per class.
inline std::array<float, 3> class_color(std::size_t k) {
    static constexpr std::array<std::array<float, 3>, 8> base{{{0.15f, 0.15f, 0.2f},
                                                               {0.85f, 0.2f, 0.2f},
                                                               {0.2f, 0.75f, 0.25f},
                                                               {0.25f, 0.3f, 0.9f},
                                                               {0.9f, 0.85f, 0.2f},
                                                               {0.8f, 0.3f, 0.85f},
                                                               {0.2f, 0.85f, 0.85f},
                                                               {0.95f, 0.6f, 0.2f}}};
    if (k < base.size()) return base[k];
    const double h = static_cast<double>(k) * 0.618033988749895;
    auto ch = [&](double off) { return static_cast<float>(0.5 + 0.4 * std::sin(6.283185307179586 * (h + off))); };
    return {ch(0.0), ch(1.0 / 3.0), ch(2.0 / 3.0)};
}

/// Box-Muller normal sample from the portable uniform generator.
inline double normal(Rng& rng) {
    const double u1 = std::max(uniform(rng, 0.0, 1.0), 1e-300), u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::size_t rand_below(Rng& rng, std::size_t n) { return n <= 1 ? 0 : static_cast<std::size_t>(rng() % n); }

/// Paints class k onto background pixels inside one random shape of roughly
/// `area` pixels; returns the number of pixels painted.
inline std::size_t paint_shape(LabelMap& lab, std::int32_t k, double area, Rng& rng) {
    const std::size_t H = lab.h, W = lab.w;
    area = std::clamp(area, 4.0, static_cast<double>(H * W));
    std::size_t painted = 0;
    auto set = [&](std::size_t y, std::size_t x) {
        auto& v = lab(0, y, x);
        if (v == 0) v = k, ++painted;
    };
    switch (rand_below(rng, 3)) {
        case 0: {  // rectangle
            const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
            const auto h = std::clamp<std::size_t>(static_cast<std::size_t>(std::sqrt(area / aspect)), 2, H);
            const auto w = std::clamp<std::size_t>(static_cast<std::size_t>(area / static_cast<double>(h)), 2, W);
            const std::size_t y0 = rand_below(rng, H - h + 1), x0 = rand_below(rng, W - w + 1);
            for (std::size_t y = y0; y < y0 + h; ++y)
                for (std::size_t x = x0; x < x0 + w; ++x) set(y, x);
            break;
        }
        case 1: {  // disk
            const double r = std::max(1.5, std::sqrt(area / 3.141592653589793));
            const double cy = uniform(rng, 0.0, static_cast<double>(H)), cx = uniform(rng, 0.0, static_cast<double>(W));
            const auto y0 = static_cast<std::size_t>(std::max(0.0, cy - r)), y1 = std::min(H, static_cast<std::size_t>(cy + r) + 1);
            const auto x0 = static_cast<std::size_t>(std::max(0.0, cx - r)), x1 = std::min(W, static_cast<std::size_t>(cx + r) + 1);
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x) {
                    const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
                    if (dy * dy + dx * dx <= r * r) set(y, x);
                }
            break;
        }
        default: {  // full-length stripe, horizontal or vertical
            const bool horizontal = rng() % 2 == 0;
            const std::size_t len = horizontal ? W : H, across = horizontal ? H : W;
            const auto t = std::clamp<std::size_t>(static_cast<std::size_t>(area / static_cast<double>(len)), 1, across);
            const std::size_t o = rand_below(rng, across - t + 1);
            for (std::size_t a = o; a < o + t; ++a)
                for (std::size_t b = 0; b < len; ++b) horizontal ? set(a, b) : set(b, a);
            break;
        }
    }
    return painted;
}

/// Renders the image from labels: class color, a class-specific stripe
/// texture, and Gaussian noise, clamped to [0, 1].
inline Tensor<float> render(const LabelMap& lab, double noise, Rng& rng) {
    Tensor<float> img(Shape{1, 3, lab.h, lab.w});
    for (std::size_t y = 0; y < lab.h; ++y)
        for (std::size_t x = 0; x < lab.w; ++x) {
            const auto k = static_cast<std::size_t>(lab(0, y, x));
            const auto col = class_color(k);
            const double period = 3.0 + static_cast<double>(k % 5);
            const double tex = 0.05 * std::sin(6.283185307179586 * static_cast<double>(x + y) / period);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = col[c] + tex + noise * normal(rng);
                img(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    return img;
}

} // namespace detail

/// Deterministic dataset of geometric shapes with exact labels. Per image,
/// each foreground class is painted (onto background only) until its pixel
/// count reaches its target share, so class frequencies track the profile.
inline std::vector<Sample> synth_dataset(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const auto freq = spec.frequencies();
    const double pixels = static_cast<double>(spec.height * spec.width);
    std::vector<Sample> out;
    out.reserve(spec.count);
    std::vector<std::size_t> order(spec.num_classes - 1);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i + 1;
    for (std::size_t n = 0; n < spec.count; ++n) {
        LabelMap lab(1, spec.height, spec.width, 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t k : order) {
            const double target = freq[k] * pixels;
            if (target < 1.0) continue;
            const std::size_t shapes = spec.min_shapes + detail::rand_below(rng, spec.max_shapes - spec.min_shapes + 1);
            double have = 0.0;
            for (std::size_t s = 0; s < shapes && have < target; ++s) {
                const double left = static_cast<double>(shapes - s);
                have += static_cast<double>(
                    detail::paint_shape(lab, static_cast<std::int32_t>(k), (target - have) / left, rng));
            }
            // top up with small rectangles until within 5 % of the target
            for (int tries = 0; tries < 64 && have < 0.95 * target; ++tries)
                have += static_cast<double>(
                    detail::paint_shape(lab, static_cast<std::int32_t>(k), std::max(4.0, target - have), rng));
        }
        Sample s;
        s.image = detail::render(lab, spec.noise, rng);
        s.label = std::move(lab);
        out.push_back(std::move(s));
    }
    return out;
}

/// Pixel frequency of every class over all non-ignored pixels.
inline std::vector<double> class_frequencies(const std::vector<Sample>& data, std::size_t num_classes,
                                             std::int32_t ignore = LabelMap::kIgnore) {
    if (data.empty()) throw DataError("class_frequencies: empty dataset");
    std::vector<double> counts(num_classes, 0.0);
    double total = 0.0;
    for (const auto& s : data)
        for (auto v : s.label.data) {
            if (v == ignore) continue;
            if (v < 0 || static_cast<std::size_t>(v) >= num_classes)
                throw DataError("class_frequencies: label " + std::to_string(v) + " outside [0," +
                                std::to_string(num_classes) + ")");
            counts[static_cast<std::size_t>(v)] += 1.0;
            total += 1.0;
        }
    if (total == 0.0) throw DataError("class_frequencies: every pixel is ignored");
    for (auto& c : counts) c /= total;
    return counts;
}

// ---------------------------------------------------------------------------
// Portable pixmap I/O (binary P5 / P6, maxval <= 255)

namespace detail {

inline std::size_t pnm_number(std::istream& is, const std::string& path) {
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = is.get();
    }
    if (ch == EOF || !std::isdigit(ch)) throw DataError("'" + path + "': malformed PNM header");
    std::size_t v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + static_cast<std::size_t>(ch - '0');
        ch = is.get();
    }
    return v;  // the single whitespace after the number has been consumed
}

struct Pnm {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> pixels;
};

inline Pnm read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    char magic[2];
    if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw DataError("'" + path + "' is not a binary PGM/PPM file");
    Pnm p;
    p.channels = magic[1] == '6' ? 3 : 1;
    p.width = pnm_number(is, path);
    p.height = pnm_number(is, path);
    const std::size_t maxval = pnm_number(is, path);
    if (p.width == 0 || p.height == 0 || maxval == 0 || maxval > 255)
        throw DataError("'" + path + "': unsupported PNM dimensions or maxval");
    p.pixels.resize(p.width * p.height * p.channels);
    if (!is.read(reinterpret_cast<char*>(p.pixels.data()), static_cast<std::streamsize>(p.pixels.size())))
        throw DataError("'" + path + "': truncated pixel data");
    return p;
}

inline void write_pnm(const std::string& path, const Pnm& p) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os << (p.channels == 3 ? "P6" : "P5") << "\n" << p.width << " " << p.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(p.pixels.data()), static_cast<std::streamsize>(p.pixels.size()));
    if (!os) throw DataError("write to '" + path + "' failed");
}

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

} // namespace detail

/// Reads a P6 image into a (1, 3, H, W) tensor in [0, 1].
inline Tensor<float> read_ppm(const std::string& path) {
    const auto p = detail::read_pnm(path);
    if (p.channels != 3) throw DataError("'" + path + "' is a grayscale image, expected RGB");
    Tensor<float> t(Shape{1, 3, p.height, p.width});
    for (std::size_t y = 0; y < p.height; ++y)
        for (std::size_t x = 0; x < p.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) t(0, c, y, x) = p.pixels[(y * p.width + x) * 3 + c] / 255.0f;
    return t;
}

inline void write_ppm(const std::string& path, const Tensor<float>& image) {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("write_ppm: expected (1,3,H,W), got " + s.str());
    detail::Pnm p{s.w, s.h, 3, std::vector<std::uint8_t>(s.h * s.w * 3)};
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) p.pixels[(y * s.w + x) * 3 + c] = detail::to_byte(image(0, c, y, x));
    detail::write_pnm(path, p);
}

/// Reads a P5 file as raw 8-bit label values.
inline LabelMap read_pgm_labels(const std::string& path) {
    const auto p = detail::read_pnm(path);
    if (p.channels != 1) throw DataError("'" + path + "' is an RGB image, expected a single-channel label map");
    LabelMap lab(1, p.height, p.width);
    for (std::size_t i = 0; i < p.pixels.size(); ++i) lab.data[i] = p.pixels[i];
    return lab;
}

inline void write_pgm_labels(const std::string& path, const LabelMap& lab) {
    if (lab.n != 1) throw ShapeError("write_pgm_labels: expected a single label map");
    detail::Pnm p{lab.w, lab.h, 1, std::vector<std::uint8_t>(lab.size())};
    for (std::size_t i = 0; i < lab.size(); ++i) {
        const auto v = lab.data[i];
        if (v < 0 || v > 255) throw DataError("write_pgm_labels: label " + std::to_string(v) + " does not fit a byte");
        p.pixels[i] = static_cast<std::uint8_t>(v);
    }
    detail::write_pnm(path, p);
}

/// Class palette blended 50/50 with the image; ignored pixels keep the image.
inline Tensor<float> color_overlay(const Tensor<float>& image, const LabelMap& lab, float alpha = 0.5f) {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 3 || lab.h != s.h || lab.w != s.w)
        throw ShapeError("color_overlay: image " + s.str() + " and label map disagree");
    Tensor<float> out = image;
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
            const auto k = lab(0, y, x);
            if (k < 0 || k == LabelMap::kIgnore) continue;
            const auto col = detail::class_color(static_cast<std::size_t>(k));
            for (std::size_t c = 0; c < 3; ++c) out(0, c, y, x) = (1 - alpha) * image(0, c, y, x) + alpha * col[c];
        }
    return out;
}

// ---------------------------------------------------------------------------
// Cityscapes directory layout

/// Cityscapes labelId -> trainId (19 evaluated classes, 255 ignored), as
/// published with the dataset's official scripts.
inline constexpr std::array<std::uint8_t, 34> kCityscapesTrainId{
    255, 255, 255, 255, 255, 255, 255, 0,   1,  255, 255, 2,  3,  4,  255, 255, 255,
    5,   255, 6,   7,   8,   9,   10,  11,  12, 13,  14,  15, 255, 255, 16, 17,  18};
inline constexpr std::size_t kCityscapesClasses = 19;
inline constexpr std::size_t kCityscapesWidth = 2048;
inline constexpr std::size_t kCityscapesHeight = 1024;

inline std::int32_t cityscapes_train_id(std::int32_t label_id) {
    if (label_id < 0 || static_cast<std::size_t>(label_id) >= kCityscapesTrainId.size())
        throw DataError("unknown Cityscapes label id " + std::to_string(label_id));
    return kCityscapesTrainId[static_cast<std::size_t>(label_id)];
}

struct CityscapesPair {
    std::string image_path;
    std::string label_path;
};

/// Pairs root/leftImg8bit/<split>/<city>/<stem>_leftImg8bit.<ext> with
/// root/gtFine/<split>/<city>/<stem>_gtFine_labelIds.pgm, sorted by path.
inline std::vector<CityscapesPair> load_cityscapes_dir(const std::string& root, const std::string& split) {
    namespace fs = std::filesystem;
    const fs::path img_root = fs::path(root) / "leftImg8bit" / split, lab_root = fs::path(root) / "gtFine" / split;
    if (!fs::is_directory(img_root)) throw DataError("missing image directory '" + img_root.string() + "'");
    if (!fs::is_directory(lab_root)) throw DataError("missing label directory '" + lab_root.string() + "'");
    const std::string tag = "_leftImg8bit";
    std::vector<CityscapesPair> out;
    for (const auto& entry : fs::recursive_directory_iterator(img_root)) {
        if (!entry.is_regular_file()) continue;
        const std::string stem = entry.path().stem().string();
        if (stem.size() <= tag.size() || stem.compare(stem.size() - tag.size(), tag.size(), tag) != 0) continue;
        const fs::path rel = fs::relative(entry.path().parent_path(), img_root);
        const std::string base = stem.substr(0, stem.size() - tag.size());
        const fs::path label = lab_root / rel / (base + "_gtFine_labelIds.pgm");
        if (!fs::is_regular_file(label)) {
            const fs::path png = lab_root / rel / (base + "_gtFine_labelIds.png");
            if (fs::is_regular_file(png))
                throw DataError("label '" + png.string() + "' is PNG; convert label maps to binary PGM");
            throw DataError("no label file for image '" + entry.path().string() + "'");
        }
        out.push_back({entry.path().string(), label.string()});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.image_path < b.image_path; });
    return out;
}

/// Loads one pair, maps label ids to train ids and optionally halves the
/// resolution (2x2 mean for the image, top-left pick for labels).
inline Sample load_cityscapes_sample(const CityscapesPair& pair, bool downscale = false) {
    Sample s;
    s.image = read_ppm(pair.image_path);
    LabelMap raw = read_pgm_labels(pair.label_path);
    if (raw.h != s.image.shape().h || raw.w != s.image.shape().w)
        throw DataError("label '" + pair.label_path + "' does not match image size");
    for (auto& v : raw.data) v = cityscapes_train_id(v);
    if (downscale) {
        s.image = avg_pool(s.image, 2);
        LabelMap half(1, raw.h / 2, raw.w / 2);
        for (std::size_t y = 0; y < half.h; ++y)
            for (std::size_t x = 0; x < half.w; ++x) half(0, y, x) = raw(0, 2 * y, 2 * x);
        raw = std::move(half);
    }
    s.label = std::move(raw);
    return s;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentSpec {
    double flip_probability = 0.5;
    double scale_min = 0.75;
    double scale_max = 1.75;
    std::size_t crop_h = 48;
    std::size_t crop_w = 96;
    /// Overrides the random flip decision when set (-1 random, 0 never, 1 always).
    int force_flip = -1;
};

/// Bilinear resize with half-pixel centers to an arbitrary size.
inline Tensor<float> resize_bilinear(const Tensor<float>& in, std::size_t oh, std::size_t ow) {
    const Shape s = in.shape();
    Tensor<float> out(Shape{s.n, s.c, oh, ow});
    auto taps = [](std::size_t n_in, std::size_t n_out) {
        std::vector<std::pair<std::size_t, double>> t(n_out);
        for (std::size_t o = 0; o < n_out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
            const auto i0 = static_cast<std::size_t>(src);
            t[o] = {i0, src - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(s.h, oh), tx = taps(s.w, ow);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < oh; ++y) {
                const std::size_t y0 = ty[y].first, y1 = std::min(y0 + 1, s.h - 1);
                const double wy = ty[y].second;
                for (std::size_t x = 0; x < ow; ++x) {
                    const std::size_t x0 = tx[x].first, x1 = std::min(x0 + 1, s.w - 1);
                    const double wx = tx[x].second;
                    const double top = in(n, c, y0, x0) * (1 - wx) + in(n, c, y0, x1) * wx;
                    const double bot = in(n, c, y1, x0) * (1 - wx) + in(n, c, y1, x1) * wx;
                    out(n, c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
                }
            }
    return out;
}

/// Nearest-neighbor resize; label values are copied, never interpolated.
inline LabelMap resize_nearest(const LabelMap& in, std::size_t oh, std::size_t ow) {
    LabelMap out(in.n, oh, ow);
    for (std::size_t n = 0; n < in.n; ++n)
        for (std::size_t y = 0; y < oh; ++y) {
            const std::size_t sy = std::min(in.h - 1, y * in.h / oh);
            for (std::size_t x = 0; x < ow; ++x) out(n, y, x) = in(n, sy, std::min(in.w - 1, x * in.w / ow));
        }
    return out;
}

inline Sample hflip(const Sample& s) {
    Sample out = s;
    const std::size_t H = s.height(), W = s.width();
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            out.label(0, y, x) = s.label(0, y, W - 1 - x);
            for (std::size_t c = 0; c < s.image.shape().c; ++c) out.image(0, c, y, x) = s.image(0, c, y, W - 1 - x);
        }
    return out;
}

/// Seeded flip -> scale -> crop pipeline.
inline Sample augment(const Sample& in, Rng& rng, const AugmentSpec& spec) {
    if (spec.scale_min <= 0.0 || spec.scale_max < spec.scale_min) throw ConfigError("augment: invalid scale range");
    const bool flip = spec.force_flip >= 0 ? spec.force_flip == 1 : uniform(rng, 0.0, 1.0) < spec.flip_probability;
    const double scale = uniform(rng, spec.scale_min, spec.scale_max);
    Sample s = flip ? hflip(in) : in;
    const auto sh = static_cast<std::size_t>(std::lround(static_cast<double>(s.height()) * scale));
    const auto sw = static_cast<std::size_t>(std::lround(static_cast<double>(s.width()) * scale));
    if (spec.crop_h > sh || spec.crop_w > sw)
        throw DataError("augment: crop " + std::to_string(spec.crop_h) + "x" + std::to_string(spec.crop_w) +
                        " larger than scaled image " + std::to_string(sh) + "x" + std::to_string(sw));
    const Tensor<float> img = resize_bilinear(s.image, sh, sw);
    const LabelMap lab = resize_nearest(s.label, sh, sw);
    const std::size_t oy = detail::rand_below(rng, sh - spec.crop_h + 1), ox = detail::rand_below(rng, sw - spec.crop_w + 1);
    Sample out;
    out.image = Tensor<float>(Shape{1, img.shape().c, spec.crop_h, spec.crop_w});
    out.label = LabelMap(1, spec.crop_h, spec.crop_w);
    for (std::size_t y = 0; y < spec.crop_h; ++y)
        for (std::size_t x = 0; x < spec.crop_w; ++x) {
            out.label(0, y, x) = lab(0, oy + y, ox + x);
            for (std::size_t c = 0; c < img.shape().c; ++c) out.image(0, c, y, x) = img(0, c, oy + y, ox + x);
        }
    return out;
}

/// Stacks samples of identical size into one batch.
inline std::pair<Tensor<float>, LabelMap> make_batch(const std::vector<Sample>& samples) {
    if (samples.empty()) throw DataError("make_batch: no samples");
    const Shape s0 = samples[0].image.shape();
    Tensor<float> img(Shape{samples.size(), s0.c, s0.h, s0.w});
    LabelMap lab(samples.size(), s0.h, s0.w);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.image.shape() != s0 || s.label.h != s0.h || s.label.w != s0.w)
            throw ShapeError("make_batch: sample " + std::to_string(i) + " size differs");
        std::copy(s.image.data().begin(), s.image.data().end(), img.ptr() + i * s0.size());
        std::copy(s.label.data.begin(), s.label.data.end(), lab.data.begin() + static_cast<std::ptrdiff_t>(i * s0.plane()));
    }
    return {std::move(img), std::move(lab)};
}

} // namespace fplnet
