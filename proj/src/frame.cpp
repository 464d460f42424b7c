#include "staging/frame.hpp"

#include <algorithm>

namespace staging::frame {

HeaderBytes encode_header(std::uint8_t tag, std::uint64_t body_length) noexcept {
    HeaderBytes out{};
    std::copy(kMagic.begin(), kMagic.end(), out.begin());
    out[4] = std::byte{tag};
    for (int i = 0; i < 8; ++i) out[5 + i] = std::byte(static_cast<std::uint8_t>(body_length >> (8 * i)));
    return out;
}

Header parse_header(std::span<const std::byte> bytes) {
    const auto magic_len = std::min(bytes.size(), kMagic.size());
    for (std::size_t i = 0; i < magic_len; ++i) {
        if (bytes[i] != kMagic[i]) throw DecodeError(0, "bad magic");
    }
    Reader r(bytes);
    r.bytes(kMagic.size());
    Header h;
    h.tag = r.u8();
    h.body_length = r.u64();
    return h;
}

}  // namespace staging::frame
