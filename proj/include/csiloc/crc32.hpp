#ifndef CSILOC_CRC32_HPP
#define CSILOC_CRC32_HPP

#include <array>
#include <cstddef>
#include <cstdint>

namespace csiloc {

// CRC-32 (IEEE 802.3, reflected, polynomial 0xEDB88320), the variant used by
// zlib and PNG. Matches e.g. `python3 -c "import zlib; print(zlib.crc32(b))"`.
class Crc32 {
  public:
    void update(const void *data, std::size_t len) {
        const auto *p = static_cast<const std::uint8_t *>(data);
        std::uint32_t c = state_;
        for (std::size_t i = 0; i < len; ++i) c = table()[(c ^ p[i]) & 0xff] ^ (c >> 8);
        state_ = c;
    }

    std::uint32_t value() const { return state_ ^ 0xffffffffu; }

    static std::uint32_t of(const void *data, std::size_t len) {
        Crc32 c;
        c.update(data, len);
        return c.value();
    }

  private:
    static const std::array<std::uint32_t, 256> &table() {
        static const std::array<std::uint32_t, 256> t = [] {
            std::array<std::uint32_t, 256> tab{};
            for (std::uint32_t i = 0; i < 256; ++i) {
                std::uint32_t c = i;
                for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
                tab[i] = c;
            }
            return tab;
        }();
        return t;
    }

    std::uint32_t state_ = 0xffffffffu;
};

} // namespace csiloc

#endif
