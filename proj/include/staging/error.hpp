#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace staging {

// Error categories shared by every layer. `none` marks a successful completion.
enum class Errc : std::uint8_t {
    none = 0,
    connection,
    timeout,
    size,
    closed,
    argument,
    resource,
    not_found,
    access,
    bounds,
    decode,
    encode,
    duplicate,
    protocol,
    capacity,
    io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& what);

    Errc code() const noexcept { return code_; }

  private:
    Errc code_;
};

// Raised by the frame decoder; offset is the byte position of the first bad byte.
class DecodeError : public Error {
  public:
    DecodeError(std::size_t offset, const std::string& what);

    std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t offset_;
};

}  // namespace staging
