#pragma once

// Reliable-connected channel emulation: ordered two-sided messaging, a
// completion queue, and one-sided writes into regions registered on the
// listening (passive) side. Two implementations: an in-process loopback and
// a stream-socket transport that carries STG1 frames.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "staging/byte_stream.hpp"
#include "staging/endpoint.hpp"
#include "staging/error.hpp"
#include "staging/frame.hpp"
#include "staging/region_table.hpp"

namespace staging {

using frame::kMaxMessage;

enum class ChannelState { connecting, established, closed, failed };

enum class OpKind : std::uint8_t { send, recv, remote_write };

struct CompletionEvent {
    std::uint64_t op_id = 0;
    OpKind kind = OpKind::send;
    Errc status = Errc::none;
    std::uint64_t bytes = 0;

    bool ok() const noexcept { return status == Errc::none; }
};

class CompletionQueue {
  public:
    void push(CompletionEvent ev);
    // Blocks up to `timeout` for the first event, then takes whatever else is ready.
    std::vector<CompletionEvent> poll(std::size_t max, Millis timeout);
    std::size_t pending() const;

  private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<CompletionEvent> events_;
};

// Direction relative to the listening side of a connection.
enum class Direction : std::uint8_t { to_listener, to_connector };

// Passive-side tap used for counters and trace recording. Callbacks run on
// transport threads and must not block.
class ChannelObserver {
  public:
    virtual ~ChannelObserver() = default;
    virtual void on_message(std::uint64_t /*channel*/, Direction, std::span<const std::byte> /*payload*/) {}
    virtual void on_remote_write(std::uint64_t /*channel*/, std::uint64_t /*token*/, std::uint32_t /*key*/,
                                 std::uint64_t /*offset*/, std::uint64_t /*length*/, Errc /*status*/) {}
    virtual void on_close(std::uint64_t /*channel*/) {}
};

// Fault and gating hooks for tests.
class FaultInjector {
  public:
    virtual ~FaultInjector() = default;
    // Initiator side, before a one-sided write is emitted. May block.
    virtual void before_write(std::uint64_t /*token*/, std::uint64_t /*offset*/, std::uint64_t /*length*/) {}
    // Passive side, after a write landed. May mutate the landed bytes.
    virtual void after_write(std::uint64_t /*token*/, std::uint64_t /*offset*/, std::span<std::byte> /*landed*/) {}
};

struct ChannelStats {
    std::uint64_t sends = 0;
    std::uint64_t recvs = 0;
    std::uint64_t remote_writes = 0;
    // Bytes read out of caller buffers by remote_write.
    std::uint64_t bytes_sourced = 0;
};

class Channel {
  public:
    virtual ~Channel() = default;
    Channel(const Channel&) = delete;
    Channel& operator=(const Channel&) = delete;

    std::uint64_t id() const noexcept { return id_; }
    const Endpoint& peer() const noexcept { return peer_; }
    virtual ChannelState state() const noexcept = 0;

    // Throws Errc::size above kMaxMessage (nothing is delivered), Errc::closed
    // on a closed channel. Returns the op id of the send completion.
    virtual std::uint64_t send(std::span<const std::byte> payload) = 0;

    // Next message in send order. Throws Errc::timeout or Errc::closed.
    virtual std::vector<std::byte> recv(Millis timeout) = 0;
    // Non-blocking variant: nullopt when nothing is queued.
    virtual std::optional<std::vector<std::byte>> try_recv() = 0;

    // One-sided write into a region registered with the peer. Access and
    // bounds failures are reported through the completion, not thrown.
    virtual std::uint64_t remote_write(std::span<const std::byte> local, std::uint64_t token, std::uint32_t key,
                                       std::uint64_t offset) = 0;

    std::vector<CompletionEvent> poll_completions(std::size_t max, Millis timeout) {
        return completions_.poll(max, timeout);
    }

    virtual void close() noexcept = 0;

    ChannelStats stats() const;

  protected:
    Channel(std::uint64_t id, Endpoint peer) : id_(id), peer_(std::move(peer)) {}

    std::uint64_t next_op() noexcept { return ++last_op_; }
    void complete(std::uint64_t op, OpKind kind, Errc status, std::uint64_t bytes);
    void count_sourced(std::uint64_t bytes) noexcept { bytes_sourced_ += bytes; }

    CompletionQueue completions_;

  private:
    std::uint64_t id_;
    Endpoint peer_;
    std::atomic<std::uint64_t> last_op_{0};
    std::atomic<std::uint64_t> sends_{0}, recvs_{0}, writes_{0}, bytes_sourced_{0};
};

class ChannelListener {
  public:
    virtual ~ChannelListener() = default;
    // nullptr when nothing arrived within `timeout` or the listener closed.
    virtual std::unique_ptr<Channel> accept(Millis timeout) = 0;
    virtual void close() noexcept = 0;
    virtual Endpoint endpoint() const = 0;
};

struct ListenOptions {
    std::shared_ptr<RegionTable> regions;  // required for one-sided writes
    std::shared_ptr<ChannelObserver> observer;
    std::shared_ptr<FaultInjector> faults;
};

struct ConnectOptions {
    Millis handshake_timeout = kDefaultHandshakeTimeout;
    std::shared_ptr<FaultInjector> faults;
};

std::unique_ptr<ChannelListener> listen(const Endpoint& endpoint, ListenOptions options = {});
// Throws Errc::connection when nothing listens, Errc::timeout on handshake timeout.
std::unique_ptr<Channel> connect(const Endpoint& endpoint, ConnectOptions options = {});

}  // namespace staging
