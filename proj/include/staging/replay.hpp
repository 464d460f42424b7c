#pragma once

// Conformance checking of recorded sessions. A trace is the ordered list of
// frames seen on one worker channel for one dataset, plus the one-sided
// writes that landed in its regions. replay_check accepts exactly the traces
// (and their prefixes) that the client and server state machines can produce.

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "staging/transport.hpp"
#include "staging/wire.hpp"

namespace staging::wire {

enum class Flow : std::uint8_t { to_server, to_client };

struct TraceEvent {
    Flow flow = Flow::to_server;
    Message msg;
    // For WriteFrame events the payload is not retained; this is its length.
    std::uint64_t write_length = 0;
};

using Trace = std::vector<TraceEvent>;

struct ReplayVerdict {
    bool accepted = true;
    std::optional<std::size_t> offending_index;
    std::string diagnostic;
};

ReplayVerdict replay_check(std::span<const TraceEvent> trace);

// Convenience constructors for hand-built traces.
TraceEvent to_server(Message msg);
TraceEvent to_client(Message msg);
TraceEvent write_event(const BlockGrant& grant, std::uint64_t offset, std::uint64_t length);

// Server-side observer that records one trace per (channel, dataset). A new
// ANNOUNCE on a channel starts a new trace. Only writes that landed are kept.
class TraceRecorder final : public ChannelObserver {
  public:
    void on_message(std::uint64_t channel, Direction dir, std::span<const std::byte> payload) override;
    void on_remote_write(std::uint64_t channel, std::uint64_t token, std::uint32_t key, std::uint64_t offset,
                         std::uint64_t length, Errc status) override;

    // Completed and in-progress traces, in the order they were started.
    std::vector<Trace> traces() const;
    void clear();

  private:
    mutable std::mutex mu_;
    std::vector<Trace> traces_;
    std::map<std::uint64_t, std::size_t> current_;  // channel -> index into traces_
};

}  // namespace staging::wire
