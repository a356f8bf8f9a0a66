#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "csiloc/errors.hpp"

namespace csiloc {

// Little-endian byte buffer IO. Writers append to a growable buffer; readers
// bounds-check every access and throw DataError on truncation.

class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void *p, std::size_t n) {
        const auto *b = static_cast<const std::uint8_t *>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void str(const std::string &s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }

    const std::vector<std::uint8_t> &data() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

  private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
  public:
    ByteReader(const std::uint8_t *p, std::size_t n) : p_(p), n_(n) {}
    explicit ByteReader(const std::vector<std::uint8_t> &v) : p_(v.data()), n_(v.size()) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32() {
        const auto *b = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const auto *b = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t max_len = 1u << 20) {
        const std::uint64_t len = u64();
        if (len > max_len) throw DataError("serial: string length implausible");
        const auto *b = take(std::size_t(len));
        return std::string(reinterpret_cast<const char *>(b), std::size_t(len));
    }

    std::size_t remaining() const { return n_ - pos_; }
    std::size_t position() const { return pos_; }

  private:
    const std::uint8_t *take(std::size_t n) {
        if (pos_ + n > n_) throw DataError("serial: truncated input");
        const auto *r = p_ + pos_;
        pos_ += n;
        return r;
    }

    const std::uint8_t *p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

} // namespace csiloc
