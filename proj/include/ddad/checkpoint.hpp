#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddad/network.hpp"
#include "ddad/tensor.hpp"

// Network persistence: a self-describing binary container (magic, version,
// embedded structure JSON, name-tagged float64 arrays, trailing checksum) and
// a content fingerprint over parameters and buffers. Round trips are
// bit-exact; files are written to a temp path and renamed into place so a
// crash never leaves a truncated checkpoint behind.

namespace ddad {

inline constexpr char kCheckpointMagic[8] = {'D', 'D', 'A', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

struct Fnv1a64 {
    std::uint64_t h = 1469598103934665603ULL;
    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    }
    void update_u64(std::uint64_t v) { update(&v, sizeof v); }
};

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace detail

// Stable hash over every parameter and buffer (names and values). Transient
// batch statistics are deliberately excluded: two states that would behave
// identically from a fresh forward compare equal.
inline std::string param_fingerprint(NetworkState& net) {
    detail::Fnv1a64 fnv;
    auto feed = [&](std::vector<std::pair<std::string, Tensor>> entries) {
        for (auto& [name, t] : entries) {
            fnv.update(name.data(), name.size());
            fnv.update(t.values().data(), t.values().size() * sizeof(double));
        }
    };
    feed(net.named_params());
    feed(net.named_buffers());
    return detail::hex64(fnv.h);
}

inline void save_checkpoint(NetworkState& net, const std::string& path) {
    std::string blob;
    auto put = [&](const void* data, std::size_t len) {
        blob.append(static_cast<const char*>(data), len);
    };
    auto put_u64 = [&](std::uint64_t v) { put(&v, sizeof v); };

    put(kCheckpointMagic, sizeof kCheckpointMagic);
    std::uint32_t version = kCheckpointVersion;
    put(&version, sizeof version);

    std::string spec_json = nlohmann::json(net.spec()).dump();
    put_u64(spec_json.size());
    put(spec_json.data(), spec_json.size());

    auto params = net.named_params();
    auto buffers = net.named_buffers();
    put_u64(params.size() + buffers.size());
    auto put_array = [&](const std::string& name, const Tensor& t) {
        put_u64(name.size());
        put(name.data(), name.size());
        put_u64(static_cast<std::uint64_t>(t.numel()));
        put(t.values().data(), t.values().size() * sizeof(double));
    };
    for (auto& [name, t] : params) put_array(name, t);
    for (auto& [name, t] : buffers) put_array(name, t);

    detail::Fnv1a64 fnv;
    fnv.update(blob.data(), blob.size());
    put_u64(fnv.h);

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + tmp + "' for writing");
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!f) throw IoError("short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot move checkpoint into place at '" + path + "'");
}

inline NetworkState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (blob.size() < sizeof kCheckpointMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t))
        throw CheckpointError("'" + path + "' is too short to be a checkpoint");

    std::size_t pos = 0;
    auto take = [&](void* out, std::size_t len) {
        if (pos + len > blob.size() - sizeof(std::uint64_t))
            throw CheckpointError("'" + path + "' is truncated");
        std::memcpy(out, blob.data() + pos, len);
        pos += len;
    };
    auto take_u64 = [&] {
        std::uint64_t v;
        take(&v, sizeof v);
        return v;
    };

    // checksum first: everything else is untrustworthy until it matches
    detail::Fnv1a64 fnv;
    fnv.update(blob.data(), blob.size() - sizeof(std::uint64_t));
    std::uint64_t want;
    std::memcpy(&want, blob.data() + blob.size() - sizeof want, sizeof want);
    if (fnv.h != want) throw CheckpointError("'" + path + "' failed its checksum (corrupt file)");

    char magic[sizeof kCheckpointMagic];
    take(magic, sizeof magic);
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
    std::uint32_t version;
    take(&version, sizeof version);
    if (version != kCheckpointVersion)
        throw CheckpointError("'" + path + "' has version " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointVersion));

    std::uint64_t spec_len = take_u64();
    std::string spec_json(spec_len, '\0');
    take(spec_json.data(), spec_len);
    NetworkSpec spec;
    try {
        nlohmann::json::parse(spec_json).get_to(spec);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("'" + path + "' carries an unreadable structure record: " + e.what());
    }

    NetworkState net(spec, /*seed=*/0);
    std::uint64_t count = take_u64();
    auto params = net.named_params();
    auto buffers = net.named_buffers();
    std::vector<std::pair<std::string, Tensor>> slots;
    slots.insert(slots.end(), params.begin(), params.end());
    slots.insert(slots.end(), buffers.begin(), buffers.end());
    if (count != slots.size())
        throw CheckpointError("'" + path + "' holds " + std::to_string(count) + " arrays, structure needs " +
                              std::to_string(slots.size()));
    for (auto& [name, t] : slots) {
        std::uint64_t name_len = take_u64();
        std::string got(name_len, '\0');
        take(got.data(), name_len);
        if (got != name)
            throw CheckpointError("'" + path + "' array '" + got + "' does not match expected '" +
                                  name + "'");
        std::uint64_t n = take_u64();
        if (n != static_cast<std::uint64_t>(t.numel()))
            throw CheckpointError("'" + path + "' array '" + name + "' has wrong length");
        take(t.values().data(), n * sizeof(double));
    }
    return net;
}

}  // namespace ddad
