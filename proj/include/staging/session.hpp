#pragma once

// Per-dataset protocol state machines. Both are pure: a step maps
// (state, event) to (state', actions) and performs no I/O. The runtimes in
// the client and server execute the actions and feed results back as events.
//
// client: idle -> announced -> writing -> done_sent -> synced     (+ failed)
// server: announced -> receiving -> complete -> queued_forward -> forwarding
//         -> forwarded -> removed                                  (+ failed)

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "staging/wire.hpp"

namespace staging::wire {

// ---------------------------------------------------------------- actions

struct SendFrame {
    Message frame;
    bool operator==(const SendFrame&) const = default;
};

// Client: write `length` bytes of the local buffer starting at `offset` into the granted region.
struct RemoteWrite {
    BlockGrant grant;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    bool operator==(const RemoteWrite&) const = default;
};

// Client: the session reached a terminal phase.
struct Finish {
    Status status = Status::ok;
    std::string reason;
    bool operator==(const Finish&) const = default;
};

// Server: register the dataset bytes [offset, offset + length) as block `block_index`.
struct RegisterRegion {
    std::uint32_t block_index = 0;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    bool operator==(const RegisterRegion&) const = default;
};

struct DeregisterAll {
    std::vector<std::uint64_t> tokens;
    bool operator==(const DeregisterAll&) const = default;
};

struct EnqueueForward {
    bool operator==(const EnqueueForward&) const = default;
};

// Server: drop the backing and credit the budget.
struct ReleaseBacking {
    bool operator==(const ReleaseBacking&) const = default;
};

// Server: keep the payload on the disk tier for manual recovery.
struct RetainBacking {
    bool operator==(const RetainBacking&) const = default;
};

using ClientAction = std::variant<SendFrame, RemoteWrite, Finish>;
using ServerAction = std::variant<SendFrame, RegisterRegion, DeregisterAll, EnqueueForward, ReleaseBacking, RetainBacking>;

// ---------------------------------------------------------------- client

enum class ClientPhase { idle, announced, writing, done_sent, synced, failed };

std::string_view to_string(ClientPhase phase) noexcept;

struct ClientSession {
    ClientPhase phase = ClientPhase::idle;
    DatasetDescriptor descriptor;
    std::uint64_t block_size = 0;
    std::uint32_t pipeline_depth = 1;
    std::uint32_t dataset_id = 0;
    std::uint64_t block_count = 0;
    std::uint64_t next_request = 0;  // lowest block index not yet requested
    std::uint64_t writes_done = 0;
    std::set<std::uint32_t> outstanding;       // requested, write not yet completed
    std::map<std::uint32_t, BlockGrant> grants;  // outstanding blocks that hold a grant
    Status outcome = Status::ok;

    bool operator==(const ClientSession&) const = default;
};

namespace client_event {
struct Start {};
struct AckReceived {
    AnnounceAck ack;
};
struct GrantReceived {
    BlockGrant grant;
};
struct WriteCompleted {
    std::uint32_t block_index = 0;
    bool ok = true;
};
// Caller-driven re-request of an outstanding block (grants are idempotent).
struct RetryBlock {
    std::uint32_t block_index = 0;
};
struct SyncReceived {
    SyncAck ack;
};
struct ErrorReceived {
    ErrorFrame error;
};
struct TransportFailed {
    std::string reason;
};
}  // namespace client_event

using ClientEvent =
    std::variant<client_event::Start, client_event::AckReceived, client_event::GrantReceived,
                 client_event::WriteCompleted, client_event::RetryBlock, client_event::SyncReceived,
                 client_event::ErrorReceived, client_event::TransportFailed>;

struct ClientStep {
    ClientSession state;
    std::vector<ClientAction> actions;
};

ClientSession make_client_session(DatasetDescriptor descriptor, std::uint64_t block_size,
                                  std::uint32_t pipeline_depth);
ClientStep client_step(ClientSession state, const ClientEvent& event);

// ---------------------------------------------------------------- server

enum class ServerPhase { announced, receiving, complete, queued_forward, forwarding, forwarded, removed, failed };

std::string_view to_string(ServerPhase phase) noexcept;
bool is_terminal(ServerPhase phase) noexcept;
bool is_legal_transition(ServerPhase from, ServerPhase to) noexcept;

struct ServerSession {
    ServerPhase phase = ServerPhase::announced;
    std::uint32_t dataset_id = 0;
    DatasetDescriptor descriptor;
    std::uint64_t block_size = 0;
    std::uint64_t block_count = 0;
    std::map<std::uint32_t, BlockGrant> grants;
    std::optional<std::uint32_t> pending_registration;

    bool operator==(const ServerSession&) const = default;
};

namespace server_event {
struct BlockRequested {
    BlockReq request;
};
struct RegionRegistered {
    BlockGrant grant;
};
struct DoneReceived {
    std::optional<std::uint64_t> bytes_accounted;  // nullopt when accounting is off
    std::uint64_t checksum = 0;                    // computed over the received bytes
};
struct Enqueued {};
struct ForwardStarted {};
struct ForwardSucceeded {};
struct ForwardRetry {};
struct ForwardFailed {};
struct BackingRemoved {};
// Client vanished before DATASET_DONE.
struct Abandoned {};
}  // namespace server_event

using ServerEvent =
    std::variant<server_event::BlockRequested, server_event::RegionRegistered, server_event::DoneReceived,
                 server_event::Enqueued, server_event::ForwardStarted, server_event::ForwardSucceeded,
                 server_event::ForwardRetry, server_event::ForwardFailed, server_event::BackingRemoved,
                 server_event::Abandoned>;

struct ServerStep {
    ServerSession state;
    std::vector<ServerAction> actions;
};

ServerSession make_server_session(std::uint32_t dataset_id, DatasetDescriptor descriptor, std::uint64_t block_size);

// Peer-driven events that are illegal produce an ERROR frame (code 3) and
// leave the state unchanged. Lifecycle events (Enqueued .. BackingRemoved)
// applied in the wrong phase are runtime bugs and throw Error(Errc::protocol).
ServerStep server_step(ServerSession state, const ServerEvent& event);

}  // namespace staging::wire
