#pragma once

// Low-level framing shared by the transport and the protocol codec.
//
//   magic "STG1" (4) | tag (1) | body_length (u64 LE, 8) | body
//
// All integers on the wire are little-endian.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "staging/error.hpp"

namespace staging::frame {

inline constexpr std::array<std::byte, 4> kMagic{std::byte{'S'}, std::byte{'T'}, std::byte{'G'},
                                                 std::byte{'1'}};
inline constexpr std::size_t kHeaderSize = 13;

// Largest single two-sided message or one-sided write.
inline constexpr std::uint64_t kMaxMessage = std::uint64_t{1} << 31;

// Transport-internal tags; the protocol tags live in wire.hpp.
inline constexpr std::uint8_t kWriteFrameTag = 0x10;
inline constexpr std::uint8_t kWriteAckTag = 0x11;

// WRITE_FRAME body prefix: region_token u64, access_key u32, offset u64.
inline constexpr std::size_t kWritePrefixSize = 20;

struct Header {
    std::uint8_t tag = 0;
    std::uint64_t body_length = 0;
};

using HeaderBytes = std::array<std::byte, kHeaderSize>;

HeaderBytes encode_header(std::uint8_t tag, std::uint64_t body_length) noexcept;

// Validates magic; throws DecodeError (offset 0 for bad magic, or the
// truncation point when fewer than kHeaderSize bytes are present).
Header parse_header(std::span<const std::byte> bytes);

// Appends little-endian fields to a byte vector.
class Writer {
  public:
    explicit Writer(std::vector<std::byte>& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.push_back(std::byte{v}); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void bytes(std::span<const std::byte> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void text(std::string_view s) {
        bytes(std::as_bytes(std::span<const char>(s.data(), s.size())));
    }

  private:
    void put(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) out_.push_back(std::byte(static_cast<std::uint8_t>(v >> (8 * i))));
    }

    std::vector<std::byte>& out_;
};

// Bounds-checked little-endian reader. `base` is the absolute offset of
// data[0] inside the enclosing frame so errors report frame offsets.
class Reader {
  public:
    Reader(std::span<const std::byte> data, std::size_t base = 0) : data_(data), base_(base) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    std::span<const std::byte> bytes(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::string text(std::size_t n) {
        auto s = bytes(n);
        return std::string(reinterpret_cast<const char*>(s.data()), s.size());
    }
    std::span<const std::byte> rest() { return bytes(remaining()); }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t offset() const noexcept { return base_ + pos_; }

  private:
    void need(std::size_t n) const {
        if (n > remaining()) throw DecodeError(base_ + data_.size(), "truncated frame");
    }
    std::uint64_t get(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= std::uint64_t(std::to_integer<std::uint8_t>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    std::span<const std::byte> data_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

}  // namespace staging::frame
