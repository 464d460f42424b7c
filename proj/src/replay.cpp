#include "staging/replay.hpp"

#include <deque>
#include <set>

#include "staging/session.hpp"

namespace staging::wire {

namespace {

struct ExpectAck {};
struct ExpectGrant {
    std::uint32_t block_index = 0;
};
struct ExpectSync {
    std::set<Status> allowed;
};
using Expectation = std::variant<ExpectAck, ExpectGrant, ExpectSync, Message>;

class Replayer {
  public:
    ReplayVerdict run(std::span<const TraceEvent> trace) {
        for (std::size_t i = 0; i < trace.size(); ++i) {
            std::string why = trace[i].flow == Flow::to_server ? from_client(trace[i]) : from_server(trace[i]);
            if (!why.empty()) return {false, i, describe(trace[i].msg) + ": " + why};
        }
        return {};
    }

  private:
    // ------------------------------------------------ client -> server

    std::string from_client(const TraceEvent& ev) {
        if (ended_) return "frame after the session ended";
        if (const auto* a = std::get_if<Announce>(&ev.msg)) return on_announce(*a);
        if (!announced_) return "frame before ANNOUNCE";
        if (!server_) return "frame before a successful ANNOUNCE_ACK";
        if (const auto* r = std::get_if<BlockReq>(&ev.msg)) return on_request(*r);
        if (const auto* w = std::get_if<WriteFrame>(&ev.msg)) return on_write(*w, ev.write_length);
        if (const auto* d = std::get_if<DatasetDone>(&ev.msg)) return on_done(*d);
        return "client frame not part of a dataset session";
    }

    std::string on_announce(const Announce& a) {
        if (announced_) return "second ANNOUNCE in one session";
        if (a.block_size == 0) return "zero block size";
        announced_ = true;
        descriptor_ = a.descriptor;
        block_size_ = a.block_size;
        count_ = block_count(a.descriptor.total_size, a.block_size);
        written_.assign(count_, 0);
        expected_.emplace_back(ExpectAck{});
        return {};
    }

    std::string on_request(const BlockReq& r) {
        if (done_) return "BLOCK_REQ after DATASET_DONE";
        if (r.dataset_id != server_->dataset_id) return "BLOCK_REQ for another dataset";
        if (r.block_index >= count_) return "block index beyond block count";
        if (!requested_.contains(r.block_index)) {
            // The client asks for new blocks lowest index first.
            if (r.block_index != next_request_) return "blocks requested out of order";
            ++next_request_;
            requested_.insert(r.block_index);
        } else if (block_written(r.block_index)) {
            return "retry of a block that was already written";
        }
        return feed(server_event::BlockRequested{r});
    }

    std::string on_write(const WriteFrame& w, std::uint64_t length) {
        if (done_) return "write after DATASET_DONE";
        auto it = token_to_block_.find(w.region_token);
        if (it == token_to_block_.end()) return "write to a region the client was never granted";
        const auto& g = client_grants_.at(it->second);
        if (w.access_key != g.access_key) return "write with the wrong access key";
        if (w.offset != 0 || length != g.region_length) return "write does not cover exactly the granted block";
        if (block_written(g.block_index)) return "block written twice";
        written_[g.block_index] = length;
        bytes_written_ += length;
        return {};
    }

    std::string on_done(const DatasetDone& d) {
        if (done_) return "second DATASET_DONE";
        if (d.dataset_id != server_->dataset_id) return "DATASET_DONE for another dataset";
        for (std::uint64_t i = 0; i < count_; ++i) {
            if (!block_written(static_cast<std::uint32_t>(i))) return "DATASET_DONE before every block was written";
        }
        done_ = true;
        // The checksum of the payload is not in the trace; both outcomes are producible.
        ExpectSync sync;
        for (auto checksum : {descriptor_.checksum, ~descriptor_.checksum}) {
            auto step = server_step(*server_, server_event::DoneReceived{bytes_written_, checksum});
            for (const auto& action : step.actions) {
                if (const auto* send = std::get_if<SendFrame>(&action)) {
                    if (const auto* ack = std::get_if<SyncAck>(&send->frame)) sync.allowed.insert(ack->status);
                }
            }
        }
        if (sync.allowed.empty()) return "server would not answer DATASET_DONE";
        expected_.emplace_back(std::move(sync));
        return {};
    }

    std::string feed(const ServerEvent& event) {
        auto step = server_step(std::move(*server_), event);
        *server_ = std::move(step.state);
        for (auto& action : step.actions) {
            if (auto* reg = std::get_if<RegisterRegion>(&action)) {
                // Region tokens are chosen at runtime; the trace's grant supplies them.
                BlockGrant placeholder{server_->dataset_id, reg->block_index, 0, 0, reg->length};
                auto next = server_step(std::move(*server_), server_event::RegionRegistered{placeholder});
                *server_ = std::move(next.state);
                expected_.emplace_back(ExpectGrant{reg->block_index});
            } else if (auto* send = std::get_if<SendFrame>(&action)) {
                if (const auto* g = std::get_if<BlockGrant>(&send->frame)) {
                    expected_.emplace_back(ExpectGrant{g->block_index});
                } else {
                    expected_.emplace_back(send->frame);
                }
            }
        }
        return {};
    }

    // ------------------------------------------------ server -> client

    std::string from_server(const TraceEvent& ev) {
        if (ended_) return "frame after the session ended";
        if (expected_.empty()) return "server frame with no client frame to answer";
        auto expect = std::move(expected_.front());
        expected_.pop_front();
        return std::visit([&](auto& e) { return match(e, ev.msg); }, expect);
    }

    std::string match(const ExpectAck&, const Message& msg) {
        const auto* ack = std::get_if<AnnounceAck>(&msg);
        if (!ack) return "expected ANNOUNCE_ACK";
        if (ack->status != Status::ok) {
            ended_ = true;
            return {};
        }
        server_ = make_server_session(ack->dataset_id, descriptor_, block_size_);
        return {};
    }

    std::string match(const ExpectGrant& e, const Message& msg) {
        const auto* g = std::get_if<BlockGrant>(&msg);
        if (!g) return "expected BLOCK_GRANT for block " + std::to_string(e.block_index);
        if (g->dataset_id != server_->dataset_id || g->block_index != e.block_index) {
            return "grant does not answer the pending request for block " + std::to_string(e.block_index);
        }
        if (g->region_length != block_length(descriptor_.total_size, block_size_, g->block_index)) {
            return "grant length is not the clipped block size";
        }
        if (auto it = client_grants_.find(g->block_index); it != client_grants_.end()) {
            if (it->second != *g) return "repeated grant differs from the first";
            return {};
        }
        if (token_to_block_.contains(g->region_token)) return "region token reused within a dataset";
        client_grants_.emplace(g->block_index, *g);
        token_to_block_.emplace(g->region_token, g->block_index);
        return {};
    }

    std::string match(const ExpectSync& e, const Message& msg) {
        const auto* ack = std::get_if<SyncAck>(&msg);
        if (!ack) return "expected SYNC_ACK";
        if (ack->dataset_id != server_->dataset_id) return "SYNC_ACK for another dataset";
        if (!e.allowed.contains(ack->status)) return "SYNC_ACK status not producible";
        ended_ = true;
        return {};
    }

    std::string match(const Message& want, const Message& msg) {
        if (want != msg) return "expected " + describe(want);
        return {};
    }

    bool block_written(std::uint32_t index) const { return written_.at(index) != 0; }

    bool announced_ = false;
    bool done_ = false;
    bool ended_ = false;
    DatasetDescriptor descriptor_;
    std::uint64_t block_size_ = 0;
    std::uint64_t count_ = 0;
    std::optional<ServerSession> server_;
    std::deque<Expectation> expected_;

    std::uint64_t next_request_ = 0;
    std::set<std::uint32_t> requested_;
    std::map<std::uint32_t, BlockGrant> client_grants_;
    std::map<std::uint64_t, std::uint32_t> token_to_block_;
    std::vector<std::uint64_t> written_;
    std::uint64_t bytes_written_ = 0;
};

}  // namespace

ReplayVerdict replay_check(std::span<const TraceEvent> trace) { return Replayer{}.run(trace); }

TraceEvent to_server(Message msg) { return {Flow::to_server, std::move(msg), 0}; }
TraceEvent to_client(Message msg) { return {Flow::to_client, std::move(msg), 0}; }

TraceEvent write_event(const BlockGrant& grant, std::uint64_t offset, std::uint64_t length) {
    return {Flow::to_server, WriteFrame{grant.region_token, grant.access_key, offset, {}}, length};
}

// ---------------------------------------------------------------- recorder

void TraceRecorder::on_message(std::uint64_t channel, Direction dir, std::span<const std::byte> payload) {
    Message msg;
    try {
        msg = decode(payload);
    } catch (const Error&) {
        return;
    }
    const auto flow = dir == Direction::to_listener ? Flow::to_server : Flow::to_client;
    std::lock_guard lk(mu_);
    if (flow == Flow::to_server && std::holds_alternative<Announce>(msg)) {
        current_[channel] = traces_.size();
        traces_.emplace_back();
    }
    auto it = current_.find(channel);
    if (it == current_.end()) return;  // control-channel traffic
    traces_[it->second].push_back({flow, std::move(msg), 0});
}

void TraceRecorder::on_remote_write(std::uint64_t channel, std::uint64_t token, std::uint32_t key,
                                    std::uint64_t offset, std::uint64_t length, Errc status) {
    if (status != Errc::none) return;
    std::lock_guard lk(mu_);
    auto it = current_.find(channel);
    if (it == current_.end()) return;
    traces_[it->second].push_back({Flow::to_server, WriteFrame{token, key, offset, {}}, length});
}

std::vector<Trace> TraceRecorder::traces() const {
    std::lock_guard lk(mu_);
    return traces_;
}

void TraceRecorder::clear() {
    std::lock_guard lk(mu_);
    traces_.clear();
    current_.clear();
}

}  // namespace staging::wire
