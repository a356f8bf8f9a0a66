#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "csiloc/crc32.hpp"
#include "csiloc/errors.hpp"
#include "csiloc/serial.hpp"

namespace csiloc {

// Checkpoint: versioned little-endian container with the experiment config
// echoed as JSON, named f32 tensors (parameters, BN running stats, optimizer
// moments), and named u64 counters (optimizer step, epochs trained).
struct Blob {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::string config_json;
    std::vector<Blob> blobs;
    std::map<std::string, std::uint64_t> counters;

    const Blob *find(const std::string &name) const {
        for (const auto &b : blobs)
            if (b.name == name) return &b;
        return nullptr;
    }
    const Blob &require(const std::string &name) const {
        const Blob *b = find(name);
        if (!b) throw DataError("checkpoint: missing tensor '" + name + "'");
        return *b;
    }
    std::uint64_t counter(const std::string &name, std::uint64_t fallback = 0) const {
        auto it = counters.find(name);
        return it == counters.end() ? fallback : it->second;
    }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint &ck) {
    ByteWriter bw;
    bw.bytes("CSIM", 4);
    bw.u32(kCheckpointVersion);
    bw.str(ck.config_json);
    bw.u64(ck.blobs.size());
    for (const auto &b : ck.blobs) {
        bw.str(b.name);
        bw.u32(std::uint32_t(b.shape.size()));
        std::uint64_t n = 1;
        for (std::uint32_t d : b.shape) {
            bw.u32(d);
            n *= d;
        }
        if (n != b.data.size()) throw DataError("checkpoint: blob '" + b.name + "' shape/data mismatch");
        for (float v : b.data) bw.f32(v);
    }
    bw.u64(ck.counters.size());
    for (const auto &[name, value] : ck.counters) {
        bw.str(name);
        bw.u64(value);
    }
    Crc32 crc;
    crc.update(bw.data().data(), bw.size());
    bw.u32(crc.value());
    return bw.data();
}

inline Checkpoint deserialize_checkpoint(const std::uint8_t *p, std::size_t n) {
    if (n < 4 + 4 + 8 + 8 + 8 + 4) throw DataError("checkpoint: file too small");
    Crc32 crc;
    crc.update(p, n - 4);
    ByteReader tail(p + n - 4, 4);
    if (tail.u32() != crc.value()) throw DataError("checkpoint: CRC mismatch (corrupt file)");

    ByteReader br(p, n - 4);
    char magic[4];
    std::memcpy(magic, p, 4);
    br.u32();
    if (std::memcmp(magic, "CSIM", 4) != 0) throw DataError("checkpoint: not a CSIM file");
    const std::uint32_t version = br.u32();
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(version));
    Checkpoint ck;
    ck.config_json = br.str(1u << 24);
    const std::uint64_t nblobs = br.u64();
    for (std::uint64_t i = 0; i < nblobs; ++i) {
        Blob b;
        b.name = br.str();
        const std::uint32_t ndim = br.u32();
        if (ndim > 8) throw DataError("checkpoint: implausible tensor rank");
        std::uint64_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            b.shape.push_back(br.u32());
            count *= b.shape.back();
        }
        if (count * 4 > br.remaining()) throw DataError("checkpoint: truncated tensor data");
        b.data.reserve(std::size_t(count));
        for (std::uint64_t k = 0; k < count; ++k) b.data.push_back(br.f32());
        ck.blobs.push_back(std::move(b));
    }
    const std::uint64_t nctr = br.u64();
    for (std::uint64_t i = 0; i < nctr; ++i) {
        std::string name = br.str();
        ck.counters[name] = br.u64();
    }
    if (br.remaining() != 0) throw DataError("checkpoint: trailing bytes");
    return ck;
}

inline void write_checkpoint(const std::string &path, const Checkpoint &ck) {
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    os.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes.data(), bytes.size());
}

} // namespace csiloc
