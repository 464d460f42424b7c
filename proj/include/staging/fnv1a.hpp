#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace staging {

// 64-bit FNV-1a, streamed in offset order.
class Fnv1a {
  public:
    static constexpr std::uint64_t kOffsetBasis = 14695981039346656037ull;
    static constexpr std::uint64_t kPrime = 1099511628211ull;

    constexpr void update(std::span<const std::byte> bytes) noexcept {
        std::uint64_t h = state_;
        for (std::byte b : bytes) {
            h ^= static_cast<std::uint8_t>(b);
            h *= kPrime;
        }
        state_ = h;
    }

    constexpr std::uint64_t digest() const noexcept { return state_; }

  private:
    std::uint64_t state_ = kOffsetBasis;
};

constexpr std::uint64_t fnv1a(std::span<const std::byte> bytes) noexcept {
    Fnv1a h;
    h.update(bytes);
    return h.digest();
}

}  // namespace staging
