#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fplnet/config.hpp"
#include "fplnet/error.hpp"
#include "fplnet/network.hpp"

namespace fplnet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

/// Binary layout (all integers little-endian):
///   "FPLNCKPT" | u32 version | u32 config length | config text (key=value lines)
///   u32 entry count
///   per entry: u16 name length | name | u8 dtype (0 f32, 1 f64) | 4 x u32 dims
///   then the raw payloads in entry order.
inline constexpr char kCheckpointMagic[8] = {'F', 'P', 'L', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<double> values;
};

struct CheckpointData {
    std::string config_text;
    std::vector<CheckpointEntry> entries;
};

namespace detail {

template <typename I>
void put(std::ostream& os, I v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(I));
}

template <typename I>
I get(std::istream& is, const std::string& what) {
    I v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(I))) throw CheckpointError("checkpoint truncated reading " + what);
    return v;
}

} // namespace detail

/// In-memory copy of every tensor of a network, as it would be saved.
template <typename T>
CheckpointData snapshot(const Network<T>& net) {
    CheckpointData out;
    out.config_text = format_network_config(net.config());
    const auto& store = net.store();
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& p = store[i];
        out.entries.push_back(CheckpointEntry{p.name, dtype_of<T>(), p.value.shape(),
                                              std::vector<double>(p.value.data().begin(), p.value.data().end())});
    }
    return out;
}

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put<std::uint32_t>(os, kCheckpointVersion);
    const std::string cfg = format_network_config(net.config());
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto& store = net.store();
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& p = store[i];
        detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::put<std::uint8_t>(os, dtype_of<T>() == DType::f32 ? 0 : 1);
        const Shape s = p.value.shape();
        for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& v = store[i].value;
        os.write(reinterpret_cast<const char*>(v.ptr()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    }
    if (!os) throw CheckpointError("write to '" + path + "' failed");
}

inline CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
    const auto version = detail::get<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    CheckpointData out;
    out.config_text.resize(detail::get<std::uint32_t>(is, "config length"));
    if (!is.read(out.config_text.data(), static_cast<std::streamsize>(out.config_text.size())))
        throw CheckpointError("checkpoint truncated reading config");
    const auto count = detail::get<std::uint32_t>(is, "entry count");
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name.resize(detail::get<std::uint16_t>(is, "name length"));
        if (!is.read(e.name.data(), static_cast<std::streamsize>(e.name.size())))
            throw CheckpointError("checkpoint truncated reading entry name");
        const auto dt = detail::get<std::uint8_t>(is, "dtype");
        if (dt > 1) throw CheckpointError("entry '" + e.name + "' has unknown dtype " + std::to_string(dt));
        e.dtype = dt == 0 ? DType::f32 : DType::f64;
        std::uint32_t dims[4];
        for (auto& d : dims) d = detail::get<std::uint32_t>(is, "dims");
        e.shape = Shape{dims[0], dims[1], dims[2], dims[3]};
        if (!e.shape.valid()) throw CheckpointError("entry '" + e.name + "' has invalid shape " + e.shape.str());
        out.entries.push_back(std::move(e));
    }
    for (auto& e : out.entries) {
        e.values.resize(e.shape.size());
        if (e.dtype == DType::f32) {
            std::vector<float> buf(e.shape.size());
            if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
                throw CheckpointError("checkpoint truncated in payload of '" + e.name + "'");
            std::copy(buf.begin(), buf.end(), e.values.begin());
        } else if (!is.read(reinterpret_cast<char*>(e.values.data()),
                            static_cast<std::streamsize>(e.values.size() * sizeof(double)))) {
            throw CheckpointError("checkpoint truncated in payload of '" + e.name + "'");
        }
    }
    if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint payload");
    return out;
}

enum class LoadMode {
    /// Every store entry must be present in the file and vice versa.
    strict,
    /// Entries present in both are loaded; the rest keep their current values.
    matching,
};

struct LoadReport {
    std::size_t loaded = 0;
    std::size_t skipped_in_file = 0;
    std::size_t kept_in_network = 0;
};

/// Copies checkpoint tensors into a network by name. All checks run before
/// anything is written, so a failed load leaves the network untouched.
template <typename T>
LoadReport load_into(Network<T>& net, const CheckpointData& data, LoadMode mode = LoadMode::strict) {
    auto& store = net.store();
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : data.entries) by_name[e.name] = &e;
    LoadReport rep;
    std::vector<std::pair<Parameter<T>*, const CheckpointEntry*>> plan;
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store[i];
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            if (mode == LoadMode::strict) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
            ++rep.kept_in_network;
            continue;
        }
        if (it->second->shape != p.value.shape())
            throw CheckpointError("shape mismatch for '" + p.name + "': checkpoint " + it->second->shape.str() +
                                  ", network " + p.value.shape().str());
        plan.emplace_back(&p, it->second);
    }
    rep.loaded = plan.size();
    rep.skipped_in_file = data.entries.size() - plan.size();
    if (mode == LoadMode::strict && rep.skipped_in_file > 0)
        throw CheckpointError("checkpoint has " + std::to_string(rep.skipped_in_file) + " entries the network lacks");
    for (auto& [p, e] : plan)
        for (std::size_t k = 0; k < e->values.size(); ++k) p->value[k] = static_cast<T>(e->values[k]);
    return rep;
}

template <typename T>
LoadReport load_into(Network<T>& net, const std::string& path, LoadMode mode = LoadMode::strict) {
    return load_into(net, read_checkpoint(path), mode);
}

/// Rebuilds the network recorded in a checkpoint and loads every tensor.
template <typename T = float>
std::unique_ptr<Network<T>> load_checkpoint(const std::string& path) {
    const CheckpointData data = read_checkpoint(path);
    NetworkConfig cfg;
    std::istringstream text(data.config_text);
    apply_config_text(cfg, text, "checkpoint config");
    auto net = build_fplnet<T>(cfg);
    load_into(*net, data, LoadMode::strict);
    return net;
}

} // namespace fplnet
