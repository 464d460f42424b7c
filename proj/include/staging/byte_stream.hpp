#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <span>

#include "staging/endpoint.hpp"

namespace staging {

using Millis = std::chrono::milliseconds;

inline constexpr Millis kDefaultHandshakeTimeout{10'000};
inline constexpr Millis kDefaultIdleTimeout{30'000};

// Reliable ordered byte stream: a TCP socket or an in-process pipe pair.
// write_all/read_exact are blocking; shutdown() unblocks both directions.
class ByteStream {
  public:
    virtual ~ByteStream() = default;

    virtual void write_all(std::span<const std::byte> data) = 0;
    // Gathered write of a header and a body without concatenating them.
    virtual void write_all(std::span<const std::byte> head, std::span<const std::byte> body);

    // Returns 0 on orderly end of stream. Throws Errc::timeout when no byte
    // arrives within `timeout`.
    virtual std::size_t read_some(std::span<std::byte> out, Millis timeout) = 0;

    // Throws Errc::closed if the stream ends before `out` is filled.
    void read_exact(std::span<std::byte> out, Millis timeout);

    virtual void shutdown() noexcept = 0;
};

class StreamAcceptor {
  public:
    virtual ~StreamAcceptor() = default;

    // Returns nullptr if nothing arrived within `timeout` or the acceptor closed.
    virtual std::unique_ptr<ByteStream> accept(Millis timeout) = 0;
    virtual void close() noexcept = 0;
    // Bound endpoint; for "host:0" this carries the ephemeral port.
    virtual Endpoint endpoint() const = 0;
};

std::unique_ptr<StreamAcceptor> listen_stream(const Endpoint& endpoint);
std::unique_ptr<ByteStream> dial_stream(const Endpoint& endpoint, Millis timeout = kDefaultHandshakeTimeout);

// Connected in-process stream pair with `capacity` bytes buffered per direction.
std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_pipe(std::size_t capacity = 1 << 20);

}  // namespace staging
