#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "csiloc/channel_sim.hpp"
#include "csiloc/crc32.hpp"
#include "csiloc/errors.hpp"
#include "csiloc/serial.hpp"

namespace csiloc {

// Dataset container round-tripped through the CSIP file format. Positions and
// CSI entries are stored as f32 on disk, so loading rounds them once; a loaded
// dataset re-saves byte-identically.
struct Dataset {
    std::uint32_t m_r = 0;
    std::uint32_t w = 0;
    std::uint32_t d = 2;
    std::vector<CsiMeasurement> records;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> serialize_dataset(const Dataset &ds) {
    ByteWriter bw;
    bw.bytes("CSIP", 4);
    bw.u32(kDatasetVersion);
    bw.u32(ds.m_r);
    bw.u32(ds.w);
    bw.u32(ds.d);
    bw.u64(ds.records.size());
    for (const auto &m : ds.records) {
        if (m.h.rows != int(ds.m_r) || m.h.cols != int(ds.w))
            throw DataError("dataset: record CSI shape differs from header");
        bw.f64(m.timestamp);
        bw.u32(m.ue_id);
        for (int i = 0; i < int(ds.d); ++i) bw.f32(float(m.position[std::size_t(i)]));
        for (const auto &z : m.h.v) {
            bw.f32(float(z.real()));
            bw.f32(float(z.imag()));
        }
    }
    Crc32 crc;
    crc.update(bw.data().data(), bw.size());
    bw.u32(crc.value());
    return bw.data();
}

inline Dataset deserialize_dataset(const std::uint8_t *p, std::size_t n) {
    if (n < 4 + 4 + 4 + 4 + 4 + 8 + 4) throw DataError("dataset: file too small");
    Crc32 crc;
    crc.update(p, n - 4);
    ByteReader tail(p + n - 4, 4);
    if (tail.u32() != crc.value()) throw DataError("dataset: CRC mismatch (corrupt file)");

    ByteReader br(p, n - 4);
    char magic[4];
    std::memcpy(magic, p, 4);
    br.u32(); // skip the magic we just copied
    if (std::memcmp(magic, "CSIP", 4) != 0) throw DataError("dataset: not a CSIP file");
    const std::uint32_t version = br.u32();
    if (version != kDatasetVersion)
        throw DataError("dataset: unsupported format version " + std::to_string(version));
    Dataset ds;
    ds.m_r = br.u32();
    ds.w = br.u32();
    ds.d = br.u32();
    if (ds.m_r == 0 || ds.w == 0) throw DataError("dataset: zero CSI dimensions");
    if (ds.d != 2) throw DataError("dataset: only 2-D positions are supported");
    const std::uint64_t count = br.u64();
    const std::uint64_t rec_size = 8 + 4 + 4ull * ds.d + 8ull * ds.m_r * ds.w;
    if (br.remaining() != count * rec_size)
        throw DataError("dataset: record count does not match file size");
    ds.records.reserve(std::size_t(count));
    for (std::uint64_t r = 0; r < count; ++r) {
        CsiMeasurement m;
        m.timestamp = br.f64();
        m.ue_id = br.u32();
        for (int i = 0; i < int(ds.d); ++i) {
            const float v = br.f32();
            if (!std::isfinite(v)) throw DataError("dataset: non-finite position");
            m.position[std::size_t(i)] = double(v);
        }
        if (!std::isfinite(m.timestamp)) throw DataError("dataset: non-finite timestamp");
        m.h = Cmat(int(ds.m_r), int(ds.w));
        for (auto &z : m.h.v) {
            const float re = br.f32(), im = br.f32();
            if (!std::isfinite(re) || !std::isfinite(im))
                throw DataError("dataset: non-finite CSI entry");
            z = {double(re), double(im)};
        }
        ds.records.push_back(std::move(m));
    }
    return ds;
}

inline void write_dataset(const std::string &path, const Dataset &ds) {
    const auto bytes = serialize_dataset(ds);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("dataset: cannot open " + path + " for writing");
    os.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
    if (!os) throw DataError("dataset: write failed for " + path);
}

inline Dataset read_dataset(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("dataset: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return deserialize_dataset(bytes.data(), bytes.size());
}

inline Dataset to_dataset(std::uint32_t m_r, std::uint32_t w,
                          std::vector<CsiMeasurement> records) {
    Dataset ds;
    ds.m_r = m_r;
    ds.w = w;
    ds.records = std::move(records);
    return ds;
}

} // namespace csiloc
