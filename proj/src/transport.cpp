#include "staging/transport.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <thread>

namespace staging {

// ---------------------------------------------------------------- completions

void CompletionQueue::push(CompletionEvent ev) {
    std::lock_guard lk(mu_);
    events_.push_back(ev);
    cv_.notify_all();
}

std::vector<CompletionEvent> CompletionQueue::poll(std::size_t max, Millis timeout) {
    std::vector<CompletionEvent> out;
    if (max == 0) return out;
    std::unique_lock lk(mu_);
    cv_.wait_for(lk, timeout, [&] { return !events_.empty(); });
    while (!events_.empty() && out.size() < max) {
        out.push_back(events_.front());
        events_.pop_front();
    }
    return out;
}

std::size_t CompletionQueue::pending() const {
    std::lock_guard lk(mu_);
    return events_.size();
}

ChannelStats Channel::stats() const {
    return ChannelStats{sends_.load(), recvs_.load(), writes_.load(), bytes_sourced_.load()};
}

void Channel::complete(std::uint64_t op, OpKind kind, Errc status, std::uint64_t bytes) {
    switch (kind) {
        case OpKind::send: ++sends_; break;
        case OpKind::recv: ++recvs_; break;
        case OpKind::remote_write: ++writes_; break;
    }
    completions_.push(CompletionEvent{op, kind, status, bytes});
}

namespace {

std::atomic<std::uint64_t> g_channel_ids{0};

void check_size(std::uint64_t n, const char* what) {
    if (n > kMaxMessage) {
        throw Error(Errc::size, std::string(what) + " of " + std::to_string(n) + " bytes exceeds the " +
                                    std::to_string(kMaxMessage) + "-byte message limit");
    }
}

// Ordered mailbox of whole messages.
class Mailbox {
  public:
    void push(std::vector<std::byte> msg) {
        std::lock_guard lk(mu_);
        queue_.push_back(std::move(msg));
        cv_.notify_all();
    }

    // Throws closed once shut and drained, timeout when nothing arrives.
    std::vector<std::byte> pop(Millis timeout) {
        std::unique_lock lk(mu_);
        if (!cv_.wait_for(lk, timeout, [&] { return !queue_.empty() || shut_; })) {
            throw Error(Errc::timeout, "no message within " + std::to_string(timeout.count()) + " ms");
        }
        if (queue_.empty()) throw Error(Errc::closed, "channel closed");
        auto msg = std::move(queue_.front());
        queue_.pop_front();
        return msg;
    }

    // nullopt when empty; throws closed once shut and drained.
    std::optional<std::vector<std::byte>> try_pop() {
        std::lock_guard lk(mu_);
        if (queue_.empty()) {
            if (shut_) throw Error(Errc::closed, "channel closed");
            return std::nullopt;
        }
        auto msg = std::move(queue_.front());
        queue_.pop_front();
        return msg;
    }

    void shut() {
        std::lock_guard lk(mu_);
        shut_ = true;
        cv_.notify_all();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::vector<std::byte>> queue_;
    bool shut_ = false;
};

// ---------------------------------------------------------------- loopback

struct LoopbackLink {
    std::uint64_t id = ++g_channel_ids;
    Mailbox to_listener;
    Mailbox to_connector;
    std::shared_ptr<RegionTable> regions;
    std::shared_ptr<ChannelObserver> observer;
    std::shared_ptr<FaultInjector> listener_faults;
    std::shared_ptr<FaultInjector> connector_faults;
    std::atomic<bool> closed{false};

    void shut() {
        if (closed.exchange(true)) return;
        to_listener.shut();
        to_connector.shut();
        if (observer) observer->on_close(id);
    }
};

class LoopbackChannel final : public Channel {
  public:
    LoopbackChannel(std::shared_ptr<LoopbackLink> link, bool listener_side, Endpoint peer)
        : Channel(link->id, std::move(peer)), link_(std::move(link)), listener_side_(listener_side) {}
    ~LoopbackChannel() override { close(); }

    ChannelState state() const noexcept override {
        if (!link_->closed) return ChannelState::established;
        return closed_locally_ ? ChannelState::closed : ChannelState::failed;
    }

    std::uint64_t send(std::span<const std::byte> payload) override {
        check_size(payload.size(), "message");
        if (link_->closed) throw Error(Errc::closed, "send on closed channel");
        const auto op = next_op();
        const auto dir = listener_side_ ? Direction::to_connector : Direction::to_listener;
        if (link_->observer) link_->observer->on_message(id(), dir, payload);
        (listener_side_ ? link_->to_connector : link_->to_listener)
            .push(std::vector<std::byte>(payload.begin(), payload.end()));
        complete(op, OpKind::send, Errc::none, payload.size());
        return op;
    }

    std::vector<std::byte> recv(Millis timeout) override {
        const auto op = next_op();
        try {
            auto msg = (listener_side_ ? link_->to_listener : link_->to_connector).pop(timeout);
            complete(op, OpKind::recv, Errc::none, msg.size());
            return msg;
        } catch (const Error& e) {
            complete(op, OpKind::recv, e.code(), 0);
            throw;
        }
    }

    std::optional<std::vector<std::byte>> try_recv() override {
        auto msg = (listener_side_ ? link_->to_listener : link_->to_connector).try_pop();
        if (msg) complete(next_op(), OpKind::recv, Errc::none, msg->size());
        return msg;
    }

    std::uint64_t remote_write(std::span<const std::byte> local, std::uint64_t token, std::uint32_t key,
                               std::uint64_t offset) override {
        check_size(local.size(), "remote write");
        if (link_->closed) throw Error(Errc::closed, "write on closed channel");
        const auto op = next_op();
        if (link_->connector_faults) link_->connector_faults->before_write(token, offset, local.size());
        if (link_->listener_faults) link_->listener_faults->before_write(token, offset, local.size());

        Errc status = Errc::access;
        if (!listener_side_ && link_->regions && !link_->closed) {
            status = link_->regions->write_with(token, key, offset, local.size(), [&](std::span<std::byte> dst) {
                if (!dst.empty()) std::memcpy(dst.data(), local.data(), dst.size());
                count_sourced(dst.size());
                if (link_->listener_faults) link_->listener_faults->after_write(token, offset, dst);
            });
        } else if (link_->closed) {
            status = Errc::closed;
        }
        if (link_->observer) link_->observer->on_remote_write(id(), token, key, offset, local.size(), status);
        complete(op, OpKind::remote_write, status, status == Errc::none ? local.size() : 0);
        return op;
    }

    void close() noexcept override {
        if (!link_->closed) closed_locally_ = true;
        link_->shut();
    }

  private:
    std::shared_ptr<LoopbackLink> link_;
    bool listener_side_;
    std::atomic<bool> closed_locally_{false};
};

class LoopbackChannelListener;

struct LoopbackChannelRegistry {
    std::mutex mu;
    std::map<std::string, LoopbackChannelListener*> listeners;

    static LoopbackChannelRegistry& instance() {
        static LoopbackChannelRegistry r;
        return r;
    }
};

class LoopbackChannelListener final : public ChannelListener {
  public:
    LoopbackChannelListener(std::string name, ListenOptions options)
        : name_(std::move(name)), options_(std::move(options)) {
        auto& reg = LoopbackChannelRegistry::instance();
        std::lock_guard lk(reg.mu);
        if (!reg.listeners.emplace(name_, this).second) {
            throw Error(Errc::connection, "loopback name '" + name_ + "' already bound");
        }
    }
    ~LoopbackChannelListener() override { close(); }

    std::unique_ptr<Channel> accept(Millis timeout) override {
        std::unique_lock lk(mu_);
        cv_.wait_for(lk, timeout, [&] { return closed_ || !pending_.empty(); });
        if (closed_ || pending_.empty()) return nullptr;
        auto ch = std::move(pending_.front());
        pending_.pop_front();
        return ch;
    }

    void close() noexcept override {
        {
            auto& reg = LoopbackChannelRegistry::instance();
            std::lock_guard lk(reg.mu);
            auto it = reg.listeners.find(name_);
            if (it != reg.listeners.end() && it->second == this) reg.listeners.erase(it);
        }
        std::lock_guard lk(mu_);
        closed_ = true;
        pending_.clear();
        cv_.notify_all();
    }

    Endpoint endpoint() const override { return Endpoint::loopback(name_); }

    // Runs under the registry lock.
    std::unique_ptr<Channel> connect(const ConnectOptions& options) {
        auto link = std::make_shared<LoopbackLink>();
        link->regions = options_.regions;
        link->observer = options_.observer;
        link->listener_faults = options_.faults;
        link->connector_faults = options.faults;
        auto client = std::make_unique<LoopbackChannel>(link, false, endpoint());
        {
            std::lock_guard lk(mu_);
            pending_.push_back(std::make_unique<LoopbackChannel>(link, true, Endpoint::loopback("peer")));
            cv_.notify_all();
        }
        return client;
    }

  private:
    std::string name_;
    ListenOptions options_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::unique_ptr<Channel>> pending_;
    bool closed_ = false;
};

// ---------------------------------------------------------------- stream

// Carries STG1 frames over a ByteStream. WRITE_FRAME (0x10) bodies are
// scattered straight into the registered region; each is answered with a
// transport-level WRITE_ACK (0x11: status u8, bytes u64).
class StreamChannel final : public Channel {
  public:
    StreamChannel(std::unique_ptr<ByteStream> stream, Endpoint peer, bool listener_side, ListenOptions passive,
                  std::shared_ptr<FaultInjector> initiator_faults)
        : Channel(++g_channel_ids, std::move(peer)),
          stream_(std::move(stream)),
          listener_side_(listener_side),
          passive_(std::move(passive)),
          initiator_faults_(std::move(initiator_faults)) {
        reader_ = std::thread([this] { read_loop(); });
    }

    ~StreamChannel() override {
        close();
        if (reader_.joinable()) reader_.join();
    }

    ChannelState state() const noexcept override { return state_.load(); }

    std::uint64_t send(std::span<const std::byte> payload) override {
        check_size(payload.size(), "message");
        auto header = frame::parse_header(payload);
        if (header.body_length != payload.size() - frame::kHeaderSize || header.tag == frame::kWriteFrameTag ||
            header.tag == frame::kWriteAckTag) {
            throw Error(Errc::argument, "stream channels carry whole STG1 protocol frames only");
        }
        ensure_open();
        const auto op = next_op();
        try {
            std::lock_guard lk(send_mu_);
            // Observed before the bytes leave so a trace never shows the peer's reply first.
            if (listener_side_ && passive_.observer) {
                passive_.observer->on_message(id(), Direction::to_connector, payload);
            }
            stream_->write_all(payload);
        } catch (const Error& e) {
            fail();
            complete(op, OpKind::send, Errc::closed, 0);
            throw Error(Errc::closed, e.what());
        }
        complete(op, OpKind::send, Errc::none, payload.size());
        return op;
    }

    std::vector<std::byte> recv(Millis timeout) override {
        const auto op = next_op();
        try {
            auto msg = inbox_.pop(timeout);
            complete(op, OpKind::recv, Errc::none, msg.size());
            return msg;
        } catch (const Error& e) {
            complete(op, OpKind::recv, e.code(), 0);
            throw;
        }
    }

    std::optional<std::vector<std::byte>> try_recv() override {
        auto msg = inbox_.try_pop();
        if (msg) complete(next_op(), OpKind::recv, Errc::none, msg->size());
        return msg;
    }

    std::uint64_t remote_write(std::span<const std::byte> local, std::uint64_t token, std::uint32_t key,
                               std::uint64_t offset) override {
        check_size(local.size(), "remote write");
        ensure_open();
        const auto op = next_op();
        if (initiator_faults_) initiator_faults_->before_write(token, offset, local.size());

        std::array<std::byte, frame::kHeaderSize + frame::kWritePrefixSize> head{};
        auto hdr = frame::encode_header(frame::kWriteFrameTag, frame::kWritePrefixSize + local.size());
        std::copy(hdr.begin(), hdr.end(), head.begin());
        std::vector<std::byte> prefix;
        frame::Writer w(prefix);
        w.u64(token);
        w.u32(key);
        w.u64(offset);
        std::copy(prefix.begin(), prefix.end(), head.begin() + frame::kHeaderSize);

        try {
            std::lock_guard lk(send_mu_);
            {
                std::lock_guard plk(pending_mu_);
                pending_writes_.push_back(op);
            }
            stream_->write_all(head, local);
            count_sourced(local.size());
        } catch (const Error&) {
            fail();
            fail_pending();
        }
        return op;
    }

    void close() noexcept override {
        auto expected = ChannelState::established;
        state_.compare_exchange_strong(expected, ChannelState::closed);
        stream_->shutdown();
        inbox_.shut();
    }

  private:
    void ensure_open() const {
        auto s = state_.load();
        if (s != ChannelState::established) throw Error(Errc::closed, "channel is not established");
    }

    void fail() noexcept {
        auto expected = ChannelState::established;
        state_.compare_exchange_strong(expected, ChannelState::failed);
        stream_->shutdown();
        inbox_.shut();
    }

    void fail_pending() {
        std::deque<std::uint64_t> pending;
        {
            std::lock_guard lk(pending_mu_);
            pending.swap(pending_writes_);
        }
        for (auto op : pending) complete(op, OpKind::remote_write, Errc::closed, 0);
    }

    void drain(std::uint64_t n) {
        std::array<std::byte, 64 * 1024> scratch;
        while (n > 0) {
            auto step = std::min<std::uint64_t>(n, scratch.size());
            stream_->read_exact({scratch.data(), step}, idle_);
            n -= step;
        }
    }

    void read_header(frame::HeaderBytes& raw) {
        // Block indefinitely between frames; shutdown() wakes the read.
        std::size_t got = 0;
        while (got < raw.size()) {
            std::size_t n = 0;
            try {
                n = stream_->read_some(std::span(raw).subspan(got), Millis{1000});
            } catch (const Error& e) {
                if (e.code() == Errc::timeout) continue;
                throw;
            }
            if (n == 0) throw Error(Errc::closed, "stream ended");
            got += n;
        }
    }

    void handle_write_frame(std::uint64_t body_length) {
        if (body_length < frame::kWritePrefixSize) throw Error(Errc::protocol, "short WRITE_FRAME");
        std::array<std::byte, frame::kWritePrefixSize> raw{};
        stream_->read_exact(raw, idle_);
        frame::Reader r(raw, frame::kHeaderSize);
        const auto token = r.u64();
        const auto key = r.u32();
        const auto offset = r.u64();
        const auto length = body_length - frame::kWritePrefixSize;
        if (length > kMaxMessage) throw Error(Errc::protocol, "oversized WRITE_FRAME");

        Errc status = Errc::access;
        if (listener_side_ && passive_.regions) {
            status = passive_.regions->write_with(token, key, offset, length, [&](std::span<std::byte> dst) {
                stream_->read_exact(dst, idle_);
                if (passive_.faults) passive_.faults->after_write(token, offset, dst);
            });
        }
        if (status != Errc::none) drain(length);
        if (passive_.observer) passive_.observer->on_remote_write(id(), token, key, offset, length, status);

        std::vector<std::byte> ack;
        frame::Writer w(ack);
        auto hdr = frame::encode_header(frame::kWriteAckTag, 9);
        w.bytes(hdr);
        w.u8(static_cast<std::uint8_t>(status));
        w.u64(status == Errc::none ? length : 0);
        std::lock_guard lk(send_mu_);
        stream_->write_all(ack);
    }

    void handle_write_ack(std::uint64_t body_length) {
        if (body_length != 9) throw Error(Errc::protocol, "malformed WRITE_ACK");
        std::array<std::byte, 9> raw{};
        stream_->read_exact(raw, idle_);
        frame::Reader r(raw, frame::kHeaderSize);
        const auto status = static_cast<Errc>(r.u8());
        const auto bytes = r.u64();
        std::uint64_t op = 0;
        {
            std::lock_guard lk(pending_mu_);
            if (pending_writes_.empty()) throw Error(Errc::protocol, "WRITE_ACK without pending write");
            op = pending_writes_.front();
            pending_writes_.pop_front();
        }
        complete(op, OpKind::remote_write, status, bytes);
    }

    void read_loop() {
        try {
            for (;;) {
                frame::HeaderBytes raw{};
                read_header(raw);
                const auto header = frame::parse_header(raw);
                if (header.tag == frame::kWriteFrameTag) {
                    handle_write_frame(header.body_length);
                } else if (header.tag == frame::kWriteAckTag) {
                    handle_write_ack(header.body_length);
                } else {
                    if (header.body_length > kMaxMessage) throw Error(Errc::protocol, "oversized frame");
                    std::vector<std::byte> msg(frame::kHeaderSize + header.body_length);
                    std::copy(raw.begin(), raw.end(), msg.begin());
                    stream_->read_exact(std::span(msg).subspan(frame::kHeaderSize), idle_);
                    if (listener_side_ && passive_.observer) {
                        passive_.observer->on_message(id(), Direction::to_listener, msg);
                    }
                    inbox_.push(std::move(msg));
                }
            }
        } catch (const std::exception&) {
            fail();
        }
        fail_pending();
        if (listener_side_ && passive_.observer) passive_.observer->on_close(id());
    }

    std::unique_ptr<ByteStream> stream_;
    bool listener_side_;
    ListenOptions passive_;
    std::shared_ptr<FaultInjector> initiator_faults_;
    Millis idle_ = kDefaultIdleTimeout;

    std::atomic<ChannelState> state_{ChannelState::established};
    std::mutex send_mu_;
    std::mutex pending_mu_;
    std::deque<std::uint64_t> pending_writes_;
    Mailbox inbox_;
    std::thread reader_;
};

class StreamChannelListener final : public ChannelListener {
  public:
    StreamChannelListener(const Endpoint& ep, ListenOptions options)
        : acceptor_(listen_stream(ep)), options_(std::move(options)) {}

    std::unique_ptr<Channel> accept(Millis timeout) override {
        auto s = acceptor_->accept(timeout);
        if (!s) return nullptr;
        return std::make_unique<StreamChannel>(std::move(s), Endpoint::stream("peer", 0), true, options_, nullptr);
    }

    void close() noexcept override { acceptor_->close(); }
    Endpoint endpoint() const override { return acceptor_->endpoint(); }

  private:
    std::unique_ptr<StreamAcceptor> acceptor_;
    ListenOptions options_;
};

}  // namespace

std::unique_ptr<ChannelListener> listen(const Endpoint& endpoint, ListenOptions options) {
    if (endpoint.scheme == Scheme::loopback) {
        return std::make_unique<LoopbackChannelListener>(endpoint.address, std::move(options));
    }
    return std::make_unique<StreamChannelListener>(endpoint, std::move(options));
}

std::unique_ptr<Channel> connect(const Endpoint& endpoint, ConnectOptions options) {
    if (endpoint.scheme == Scheme::loopback) {
        auto& reg = LoopbackChannelRegistry::instance();
        std::lock_guard lk(reg.mu);
        auto it = reg.listeners.find(endpoint.address);
        if (it == reg.listeners.end()) {
            throw Error(Errc::connection, "no loopback listener named '" + endpoint.address + "'");
        }
        return it->second->connect(options);
    }
    auto stream = dial_stream(endpoint, options.handshake_timeout);
    return std::make_unique<StreamChannel>(std::move(stream), endpoint, false, ListenOptions{},
                                           std::move(options.faults));
}

}  // namespace staging
