#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <istream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fplnet/data.hpp"
#include "fplnet/error.hpp"
#include "fplnet/network.hpp"
#include "fplnet/optim.hpp"

namespace fplnet {

/// Two-stage toy protocol: encoder-only pretraining with the 8x bilinear
/// head, then the full network initialized from the encoder.
struct ToyProtocol {
    std::size_t encoder_iters = 600;
    std::size_t full_iters = 1400;
    std::size_t encoder_batch = 4;
    std::size_t full_batch = 4;
    std::size_t val_count = 50;
    bool augment = false;
    AugmentSpec augment_spec{};
    std::size_t log_every = 50;

    void validate() const {
        if (encoder_iters + full_iters == 0) throw ConfigError("toy: need at least one iteration");
        if (encoder_batch < 1 || full_batch < 1) throw ConfigError("toy: batch sizes must be >= 1");
        if (val_count < 1) throw ConfigError("toy: val_count must be >= 1");
        if (log_every < 1) throw ConfigError("toy: log_every must be >= 1");
    }
};

/// Everything a CLI run can configure.
struct RunConfig {
    NetworkConfig net;
    TrainConfig train;
    SynthSpec data;
    ToyProtocol toy;
};

struct KeyValue {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

inline double to_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <typename V, typename F>
std::string join(const std::vector<V>& xs, F f) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
    return out;
}

struct Field {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

inline std::vector<Field> network_fields(NetworkConfig& c) {
    auto size_field = [](const char* key, std::size_t& ref) {
        return Field{key, [&ref] { return std::to_string(ref); }, [&ref, key](const std::string& v) { ref = to_size(key, v); }};
    };
    return {
        size_field("net.num_classes", c.num_classes),
        size_field("net.image_channels", c.image_channels),
        size_field("net.stage2_modules", c.stage2_modules),
        size_field("net.stage3_modules", c.stage3_modules),
        size_field("net.stage1_channels", c.stage1_channels),
        size_field("net.stage2_channels", c.stage2_channels),
        size_field("net.stage3_channels", c.stage3_channels),
        size_field("net.decoder1_channels", c.decoder1_channels),
        size_field("net.decoder2_channels", c.decoder2_channels),
        size_field("net.decoder1_modules", c.decoder1_modules),
        size_field("net.decoder2_modules", c.decoder2_modules),
        size_field("net.branches", c.branches),
        {"net.dilations", [&c] { return join(c.dilations, [](std::size_t d) { return std::to_string(d); }); },
         [&c](const std::string& v) {
             c.dilations.clear();
             for (const auto& s : split_list(v)) c.dilations.push_back(to_size("net.dilations", s));
         }},
        {"net.module_fusion", [&c] { return std::string(fusion_name(c.module_fusion)); },
         [&c](const std::string& v) { c.module_fusion = parse_module_fusion(v); }},
        {"net.downsampling", [&c] { return std::string(downsampling_name(c.downsampling)); },
         [&c](const std::string& v) {
             if (v == "delayed") c.downsampling = Downsampling::delayed;
             else if (v == "hasty") c.downsampling = Downsampling::hasty;
             else throw ConfigError("net.downsampling: expected delayed or hasty, got '" + v + "'");
         }},
        {"net.module_kind", [&c] { return std::string(module_kind_name(c.module_kind)); },
         [&c](const std::string& v) {
             if (v == "fpl") c.module_kind = ModuleKind::fpl;
             else if (v == "esp") c.module_kind = ModuleKind::esp;
             else throw ConfigError("net.module_kind: expected fpl or esp, got '" + v + "'");
         }},
        {"net.factorization", [&c] { return std::string(factorization_name(c.factorization)); },
         [&c](const std::string& v) { c.factorization = parse_factorization(v); }},
        {"net.fusion_strategy", [&c] { return std::string(fusion_strategy_name(c.fusion_strategy)); },
         [&c](const std::string& v) { c.fusion_strategy = parse_fusion_strategy(v); }},
        {"net.decoder", [&c] { return std::string(decoder_kind_name(c.decoder)); },
         [&c](const std::string& v) {
             if (v == "sequential") c.decoder = DecoderKind::sequential;
             else if (v == "encoder_only") c.decoder = DecoderKind::encoder_only;
             else throw ConfigError("net.decoder: expected sequential or encoder_only, got '" + v + "'");
         }},
        {"net.seed", [&c] { return std::to_string(c.seed); },
         [&c](const std::string& v) { c.seed = to_size("net.seed", v); }},
    };
}

inline std::vector<Field> run_fields(RunConfig& rc) {
    auto fields = network_fields(rc.net);
    auto sz = [](std::string key, std::size_t& ref) {
        return Field{key, [&ref] { return std::to_string(ref); }, [&ref, key](const std::string& v) { ref = to_size(key, v); }};
    };
    auto dbl = [](std::string key, double& ref) {
        return Field{key, [&ref] { return fmt_double(ref); }, [&ref, key](const std::string& v) { ref = to_double(key, v); }};
    };
    auto& t = rc.train;
    auto& d = rc.data;
    auto& y = rc.toy;
    std::vector<Field> more{
        dbl("train.lr_init", t.lr_init),
        dbl("train.power", t.power),
        dbl("train.momentum", t.momentum),
        dbl("train.weight_decay", t.weight_decay),
        dbl("train.class_weight_c", t.class_weight_c),
        sz("data.height", d.height),
        sz("data.width", d.width),
        sz("data.count", d.count),
        sz("data.min_shapes", d.min_shapes),
        sz("data.max_shapes", d.max_shapes),
        dbl("data.noise", d.noise),
        {"data.profile", [&d] { return join(d.profile, fmt_double); },
         [&d](const std::string& v) {
             d.profile.clear();
             if (v.empty()) return;
             for (const auto& s : split_list(v)) d.profile.push_back(to_double("data.profile", s));
         }},
        {"data.seed", [&d] { return std::to_string(d.seed); },
         [&d](const std::string& v) { d.seed = to_size("data.seed", v); }},
        sz("toy.encoder_iters", y.encoder_iters),
        sz("toy.full_iters", y.full_iters),
        sz("toy.encoder_batch", y.encoder_batch),
        sz("toy.full_batch", y.full_batch),
        sz("toy.val_count", y.val_count),
        {"toy.augment", [&y] { return std::string(y.augment ? "true" : "false"); },
         [&y](const std::string& v) { y.augment = to_bool("toy.augment", v); }},
        dbl("toy.flip_probability", y.augment_spec.flip_probability),
        dbl("toy.scale_min", y.augment_spec.scale_min),
        dbl("toy.scale_max", y.augment_spec.scale_max),
        sz("toy.crop_h", y.augment_spec.crop_h),
        sz("toy.crop_w", y.augment_spec.crop_w),
        sz("toy.log_every", y.log_every),
    };
    fields.insert(fields.end(), more.begin(), more.end());
    return fields;
}

/// Applies key/value pairs; `net.preset` (default | tiny) is applied first
/// wherever it appears so explicit keys override it.
inline void apply_pairs(std::vector<Field> fields, const std::vector<KeyValue>& kvs, const std::string& source,
                        NetworkConfig& net) {
    for (const auto& kv : kvs) {
        if (kv.key != "net.preset") continue;
        const std::uint64_t seed = net.seed;
        if (kv.value == "tiny") net = NetworkConfig::tiny();
        else if (kv.value == "default") net = NetworkConfig{};
        else throw ConfigError(source + ":" + std::to_string(kv.line) + ": net.preset must be default or tiny");
        net.seed = seed;
    }
    for (const auto& kv : kvs) {
        if (kv.key == "net.preset") continue;
        const Field* f = nullptr;
        for (const auto& cand : fields)
            if (cand.key == kv.key) f = &cand;
        if (!f) throw ConfigError(source + ":" + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
        try {
            f->set(kv.value);
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(kv.line) + ": " + e.what());
        }
    }
}

} // namespace detail

/// Parses `key = value` lines; '#' starts a comment line, blank lines are
/// skipped. Duplicate keys and lines without '=' are errors.
inline std::vector<KeyValue> parse_key_values(std::istream& is, const std::string& source) {
    std::vector<KeyValue> out;
    std::set<std::string> seen;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(is, raw)) {
        ++line;
        const std::string s = detail::trim(raw);
        if (s.empty() || s[0] == '#') continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(line) + ": expected key=value, got '" + s + "'");
        KeyValue kv{detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)), line};
        if (kv.key.empty()) throw ConfigError(source + ":" + std::to_string(line) + ": empty key");
        if (!seen.insert(kv.key).second)
            throw ConfigError(source + ":" + std::to_string(line) + ": duplicate key '" + kv.key + "'");
        out.push_back(std::move(kv));
    }
    return out;
}

/// Network keys only; used for configs embedded in checkpoints.
inline void apply_config_text(NetworkConfig& cfg, std::istream& is, const std::string& source) {
    detail::apply_pairs(detail::network_fields(cfg), parse_key_values(is, source), source, cfg);
    cfg.validate();
}

inline std::string format_network_config(NetworkConfig cfg) {
    std::string out;
    for (const auto& f : detail::network_fields(cfg)) out += f.key + "=" + f.get() + "\n";
    return out;
}

/// Applies a full run config. The dataset inherits net.num_classes.
inline void apply_config_text(RunConfig& rc, std::istream& is, const std::string& source) {
    detail::apply_pairs(detail::run_fields(rc), parse_key_values(is, source), source, rc.net);
    rc.data.num_classes = rc.net.num_classes;
    rc.net.validate();
    rc.train.validate();
    rc.data.validate();
    rc.toy.validate();
}

inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config") {
    RunConfig rc;
    std::istringstream is(text);
    apply_config_text(rc, is, source);
    return rc;
}

/// Every key with its resolved value, one per line, in a fixed order.
inline std::string format_run_config(RunConfig rc) {
    std::string out;
    for (const auto& f : detail::run_fields(rc)) out += f.key + "=" + f.get() + "\n";
    return out;
}

} // namespace fplnet
