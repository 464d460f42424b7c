#include "staging/session.hpp"

#include <algorithm>

namespace staging::wire {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::uint16_t kViolation = static_cast<std::uint16_t>(Status::protocol_violation);

ClientStep client_violation(ClientSession s, std::string reason) {
    s.phase = ClientPhase::failed;
    s.outcome = Status::protocol_violation;
    ClientStep step{std::move(s), {}};
    step.actions.emplace_back(SendFrame{ErrorFrame{kViolation, reason}});
    step.actions.emplace_back(Finish{Status::protocol_violation, std::move(reason)});
    return step;
}

ClientStep client_fail(ClientSession s, Status status, std::string reason) {
    s.phase = ClientPhase::failed;
    s.outcome = status;
    ClientStep step{std::move(s), {}};
    step.actions.emplace_back(Finish{status, std::move(reason)});
    return step;
}

void request_more(ClientSession& s, std::vector<ClientAction>& actions) {
    while (s.next_request < s.block_count && s.outstanding.size() < s.pipeline_depth) {
        const auto index = static_cast<std::uint32_t>(s.next_request++);
        s.outstanding.insert(index);
        actions.emplace_back(SendFrame{BlockReq{s.dataset_id, index}});
    }
}

bool terminal(ClientPhase p) { return p == ClientPhase::synced || p == ClientPhase::failed; }

}  // namespace

std::string_view to_string(ClientPhase phase) noexcept {
    switch (phase) {
        case ClientPhase::idle: return "idle";
        case ClientPhase::announced: return "announced";
        case ClientPhase::writing: return "writing";
        case ClientPhase::done_sent: return "done_sent";
        case ClientPhase::synced: return "synced";
        case ClientPhase::failed: return "failed";
    }
    return "unknown";
}

ClientSession make_client_session(DatasetDescriptor descriptor, std::uint64_t block_size,
                                  std::uint32_t pipeline_depth) {
    if (block_size == 0) throw Error(Errc::argument, "block size must be positive");
    if (pipeline_depth == 0) throw Error(Errc::argument, "pipeline depth must be positive");
    ClientSession s;
    s.descriptor = std::move(descriptor);
    s.block_size = block_size;
    s.pipeline_depth = pipeline_depth;
    s.block_count = block_count(s.descriptor.total_size, block_size);
    return s;
}

ClientStep client_step(ClientSession s, const ClientEvent& event) {
    if (terminal(s.phase)) return {std::move(s), {}};

    return std::visit(
        overloaded{
            [&](const client_event::Start&) -> ClientStep {
                if (s.phase != ClientPhase::idle) return client_violation(std::move(s), "session already started");
                s.phase = ClientPhase::announced;
                ClientStep step{s, {}};
                step.actions.emplace_back(SendFrame{Announce{s.descriptor, s.block_size}});
                return step;
            },
            [&](const client_event::AckReceived& e) -> ClientStep {
                if (s.phase != ClientPhase::announced) {
                    return client_violation(std::move(s), "unexpected ANNOUNCE_ACK");
                }
                if (e.ack.status != Status::ok) {
                    return client_fail(std::move(s), e.ack.status, "announce rejected");
                }
                s.dataset_id = e.ack.dataset_id;
                ClientStep step{{}, {}};
                if (s.block_count == 0) {
                    s.phase = ClientPhase::done_sent;
                    step.actions.emplace_back(SendFrame{DatasetDone{s.dataset_id}});
                } else {
                    s.phase = ClientPhase::writing;
                    request_more(s, step.actions);
                }
                step.state = std::move(s);
                return step;
            },
            [&](const client_event::GrantReceived& e) -> ClientStep {
                const auto& g = e.grant;
                if (s.phase != ClientPhase::writing) return client_violation(std::move(s), "unexpected BLOCK_GRANT");
                if (g.dataset_id != s.dataset_id) return client_violation(std::move(s), "grant for another dataset");
                if (g.block_index >= s.block_count) {
                    return client_violation(std::move(s), "grant index beyond block count");
                }
                if (!s.outstanding.contains(g.block_index)) {
                    return client_violation(std::move(s), "grant for a block that was not requested");
                }
                const auto expected = block_length(s.descriptor.total_size, s.block_size, g.block_index);
                if (g.region_length != expected) return client_violation(std::move(s), "grant length mismatch");
                if (auto it = s.grants.find(g.block_index); it != s.grants.end()) {
                    if (it->second == g) return {std::move(s), {}};  // duplicate of a retried request
                    return client_violation(std::move(s), "conflicting grant for a block");
                }
                s.grants.emplace(g.block_index, g);
                ClientStep step{s, {}};
                step.actions.emplace_back(RemoteWrite{g, std::uint64_t{g.block_index} * s.block_size, expected});
                return step;
            },
            [&](const client_event::WriteCompleted& e) -> ClientStep {
                if (s.phase != ClientPhase::writing || !s.grants.contains(e.block_index)) {
                    return client_violation(std::move(s), "completion for a write that was not issued");
                }
                if (!e.ok) return client_fail(std::move(s), Status::internal, "remote write failed");
                s.grants.erase(e.block_index);
                s.outstanding.erase(e.block_index);
                ++s.writes_done;
                ClientStep step{{}, {}};
                request_more(s, step.actions);
                if (s.writes_done == s.block_count) {
                    s.phase = ClientPhase::done_sent;
                    step.actions.emplace_back(SendFrame{DatasetDone{s.dataset_id}});
                }
                step.state = std::move(s);
                return step;
            },
            [&](const client_event::RetryBlock& e) -> ClientStep {
                if (e.block_index >= s.block_count) {
                    return client_violation(std::move(s), "block index beyond block count");
                }
                if (s.phase != ClientPhase::writing || !s.outstanding.contains(e.block_index)) {
                    return client_violation(std::move(s), "retry of a block that is not outstanding");
                }
                ClientStep step{s, {}};
                step.actions.emplace_back(SendFrame{BlockReq{s.dataset_id, e.block_index}});
                return step;
            },
            [&](const client_event::SyncReceived& e) -> ClientStep {
                if (s.phase != ClientPhase::done_sent || e.ack.dataset_id != s.dataset_id) {
                    return client_violation(std::move(s), "unexpected SYNC_ACK");
                }
                if (e.ack.status != Status::ok) return client_fail(std::move(s), e.ack.status, "sync rejected");
                s.phase = ClientPhase::synced;
                ClientStep step{s, {}};
                step.actions.emplace_back(Finish{Status::ok, {}});
                return step;
            },
            [&](const client_event::ErrorReceived& e) -> ClientStep {
                auto status = e.error.code <= static_cast<std::uint16_t>(Status::internal)
                                  ? static_cast<Status>(e.error.code)
                                  : Status::internal;
                if (status == Status::ok) status = Status::internal;
                return client_fail(std::move(s), status, "server error: " + e.error.text);
            },
            [&](const client_event::TransportFailed& e) -> ClientStep {
                return client_fail(std::move(s), Status::internal, "transport failure: " + e.reason);
            },
        },
        event);
}

// ---------------------------------------------------------------- server

std::string_view to_string(ServerPhase phase) noexcept {
    switch (phase) {
        case ServerPhase::announced: return "announced";
        case ServerPhase::receiving: return "receiving";
        case ServerPhase::complete: return "complete";
        case ServerPhase::queued_forward: return "queued_forward";
        case ServerPhase::forwarding: return "forwarding";
        case ServerPhase::forwarded: return "forwarded";
        case ServerPhase::removed: return "removed";
        case ServerPhase::failed: return "failed";
    }
    return "unknown";
}

bool is_terminal(ServerPhase phase) noexcept {
    return phase == ServerPhase::removed || phase == ServerPhase::failed;
}

bool is_legal_transition(ServerPhase from, ServerPhase to) noexcept {
    using P = ServerPhase;
    if (to == P::failed) return !is_terminal(from) && from != P::forwarded;
    switch (from) {
        case P::announced: return to == P::receiving || to == P::complete;
        case P::receiving: return to == P::complete;
        case P::complete: return to == P::queued_forward;
        case P::queued_forward: return to == P::forwarding;
        case P::forwarding: return to == P::forwarded || to == P::queued_forward;
        case P::forwarded: return to == P::removed;
        case P::removed:
        case P::failed: return false;
    }
    return false;
}

ServerSession make_server_session(std::uint32_t dataset_id, DatasetDescriptor descriptor, std::uint64_t block_size) {
    ServerSession s;
    s.dataset_id = dataset_id;
    s.block_size = block_size;
    s.block_count = block_count(descriptor.total_size, block_size);
    s.descriptor = std::move(descriptor);
    return s;
}

namespace {

ServerStep server_violation(ServerSession s, std::string reason) {
    ServerStep step{std::move(s), {}};
    step.actions.emplace_back(SendFrame{ErrorFrame{kViolation, std::move(reason)}});
    return step;
}

void move_to(ServerSession& s, ServerPhase to) {
    if (!is_legal_transition(s.phase, to)) {
        throw Error(Errc::protocol, "illegal server transition " + std::string(to_string(s.phase)) + " -> " +
                                        std::string(to_string(to)));
    }
    s.phase = to;
}

bool accepts_data(ServerPhase p) { return p == ServerPhase::announced || p == ServerPhase::receiving; }

DeregisterAll all_tokens(const ServerSession& s) {
    DeregisterAll d;
    for (const auto& [_, g] : s.grants) d.tokens.push_back(g.region_token);
    return d;
}

}  // namespace

ServerStep server_step(ServerSession s, const ServerEvent& event) {
    return std::visit(
        overloaded{
            [&](const server_event::BlockRequested& e) -> ServerStep {
                const auto& req = e.request;
                if (req.dataset_id != s.dataset_id) return server_violation(std::move(s), "unknown dataset id");
                if (!accepts_data(s.phase)) {
                    return server_violation(std::move(s), "block request after dataset done");
                }
                if (req.block_index >= s.block_count) {
                    return server_violation(std::move(s), "block index " + std::to_string(req.block_index) +
                                                              " out of range (" + std::to_string(s.block_count) +
                                                              " blocks)");
                }
                if (s.pending_registration) return server_violation(std::move(s), "registration in progress");
                ServerStep step{{}, {}};
                if (auto it = s.grants.find(req.block_index); it != s.grants.end()) {
                    step.actions.emplace_back(SendFrame{it->second});
                } else {
                    const auto offset = std::uint64_t{req.block_index} * s.block_size;
                    const auto length = block_length(s.descriptor.total_size, s.block_size, req.block_index);
                    s.pending_registration = req.block_index;
                    if (s.phase == ServerPhase::announced) move_to(s, ServerPhase::receiving);
                    step.actions.emplace_back(RegisterRegion{req.block_index, offset, length});
                }
                step.state = std::move(s);
                return step;
            },
            [&](const server_event::RegionRegistered& e) -> ServerStep {
                if (!s.pending_registration || *s.pending_registration != e.grant.block_index ||
                    e.grant.dataset_id != s.dataset_id) {
                    throw Error(Errc::protocol, "region registered without a pending request");
                }
                s.pending_registration.reset();
                s.grants.emplace(e.grant.block_index, e.grant);
                ServerStep step{std::move(s), {}};
                step.actions.emplace_back(SendFrame{e.grant});
                return step;
            },
            [&](const server_event::DoneReceived& e) -> ServerStep {
                if (!accepts_data(s.phase) || s.pending_registration) {
                    return server_violation(std::move(s), "unexpected DATASET_DONE");
                }
                ServerStep step{{}, {}};
                step.actions.emplace_back(all_tokens(s));
                const auto id = s.dataset_id;
                if (e.bytes_accounted && *e.bytes_accounted < s.descriptor.total_size) {
                    move_to(s, ServerPhase::failed);
                    step.actions.emplace_back(SendFrame{SyncAck{id, Status::protocol_violation}});
                    step.actions.emplace_back(ReleaseBacking{});
                } else if (e.checksum != s.descriptor.checksum) {
                    move_to(s, ServerPhase::failed);
                    step.actions.emplace_back(SendFrame{SyncAck{id, Status::checksum_mismatch}});
                    step.actions.emplace_back(ReleaseBacking{});
                } else {
                    move_to(s, ServerPhase::complete);
                    // Queued before the ack so a command sent after sync sees it.
                    step.actions.emplace_back(EnqueueForward{});
                    step.actions.emplace_back(SendFrame{SyncAck{id, Status::ok}});
                }
                step.state = std::move(s);
                return step;
            },
            [&](const server_event::Enqueued&) -> ServerStep {
                move_to(s, ServerPhase::queued_forward);
                return {std::move(s), {}};
            },
            [&](const server_event::ForwardStarted&) -> ServerStep {
                move_to(s, ServerPhase::forwarding);
                return {std::move(s), {}};
            },
            [&](const server_event::ForwardSucceeded&) -> ServerStep {
                move_to(s, ServerPhase::forwarded);
                ServerStep step{std::move(s), {}};
                step.actions.emplace_back(ReleaseBacking{});
                return step;
            },
            [&](const server_event::ForwardRetry&) -> ServerStep {
                if (s.phase != ServerPhase::forwarding) throw Error(Errc::protocol, "retry outside forwarding");
                move_to(s, ServerPhase::queued_forward);
                return {std::move(s), {}};
            },
            [&](const server_event::ForwardFailed&) -> ServerStep {
                if (s.phase != ServerPhase::forwarding) throw Error(Errc::protocol, "forward failure outside forwarding");
                move_to(s, ServerPhase::failed);
                ServerStep step{std::move(s), {}};
                step.actions.emplace_back(RetainBacking{});
                return step;
            },
            [&](const server_event::BackingRemoved&) -> ServerStep {
                move_to(s, ServerPhase::removed);
                return {std::move(s), {}};
            },
            [&](const server_event::Abandoned&) -> ServerStep {
                if (!accepts_data(s.phase)) return {std::move(s), {}};
                ServerStep step{{}, {}};
                step.actions.emplace_back(all_tokens(s));
                step.actions.emplace_back(ReleaseBacking{});
                s.pending_registration.reset();
                move_to(s, ServerPhase::failed);
                step.state = std::move(s);
                return step;
            },
        },
        event);
}

}  // namespace staging::wire
