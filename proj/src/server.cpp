#include "staging/server.hpp"

#include <algorithm>
#include <cstring>
#include <deque>
#include <fstream>

#include <json.hpp>

#include "staging/fnv1a.hpp"

namespace staging {

using namespace wire;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::uint64_t FrameCounts::control_frames() const {
    std::uint64_t n = 0;
    for (auto t : {Tag::announce, Tag::announce_ack, Tag::block_req, Tag::block_grant, Tag::dataset_done,
                   Tag::sync_ack}) {
        n += in(t) + out(t);
    }
    return n;
}

FrameCounts FrameCounts::operator-(const FrameCounts& earlier) const {
    FrameCounts d;
    for (std::size_t i = 0; i < inbound.size(); ++i) {
        d.inbound[i] = inbound[i] - earlier.inbound[i];
        d.outbound[i] = outbound[i] - earlier.outbound[i];
    }
    d.remote_writes = remote_writes - earlier.remote_writes;
    d.remote_write_bytes = remote_write_bytes - earlier.remote_write_bytes;
    return d;
}

// Counts every frame by tag, then hands it to the configured observer.
class StagingServer::Counters final : public ChannelObserver {
  public:
    explicit Counters(std::shared_ptr<ChannelObserver> next) : next_(std::move(next)) {}

    void on_message(std::uint64_t ch, Direction dir, std::span<const std::byte> payload) override {
        if (payload.size() > 4) {
            const auto tag = static_cast<std::uint8_t>(payload[4]);
            (dir == Direction::to_listener ? inbound_ : outbound_)[tag].fetch_add(1, std::memory_order_relaxed);
        }
        if (next_) next_->on_message(ch, dir, payload);
    }

    void on_remote_write(std::uint64_t ch, std::uint64_t token, std::uint32_t key, std::uint64_t offset,
                         std::uint64_t length, Errc status) override {
        writes_.fetch_add(1, std::memory_order_relaxed);
        if (status == Errc::none) write_bytes_.fetch_add(length, std::memory_order_relaxed);
        if (next_) next_->on_remote_write(ch, token, key, offset, length, status);
    }

    void on_close(std::uint64_t ch) override {
        if (next_) next_->on_close(ch);
    }

    FrameCounts snapshot() const {
        FrameCounts c;
        for (std::size_t i = 0; i < 256; ++i) {
            c.inbound[i] = inbound_[i].load();
            c.outbound[i] = outbound_[i].load();
        }
        c.remote_writes = writes_.load();
        c.remote_write_bytes = write_bytes_.load();
        return c;
    }

  private:
    std::shared_ptr<ChannelObserver> next_;
    std::array<std::atomic<std::uint64_t>, 256> inbound_{};
    std::array<std::atomic<std::uint64_t>, 256> outbound_{};
    std::atomic<std::uint64_t> writes_{0}, write_bytes_{0};
};

struct StagingServer::Dataset {
    std::mutex mu;
    ServerSession fsm;
    std::unique_ptr<Backing> backing;
    Tier tier = Tier::memory;
    std::optional<std::uint64_t> arrival_seq;
    std::uint64_t block_requests = 0;
    std::uint64_t channel = 0;
    fs::path sidecar;  // set when requeued from a retained failure
};

namespace {

bool in_progress(ServerPhase p) { return p == ServerPhase::announced || p == ServerPhase::receiving; }

}  // namespace

// ---------------------------------------------------------------- lifecycle

StagingServer::StagingServer(ServerConfig config) : config_(std::move(config)), log_(config_.log) {}

std::unique_ptr<StagingServer> StagingServer::start(ServerConfig config) {
    if (config.forward_workers < 1) throw Error(Errc::argument, "forward_workers must be at least 1");
    if (config.relay_buffer == 0) throw Error(Errc::argument, "relay buffer must be positive");

    std::unique_ptr<StagingServer> s(new StagingServer(std::move(config)));
    auto& c = s->config_;
    s->store_ = std::make_unique<Store>(c.store);
    s->regions_ = std::make_shared<RegionTable>(RegionTableOptions{c.key_seed, !c.strict_one_sided});
    s->counters_ = std::make_shared<Counters>(c.observer);
    if (c.start_paused) s->queue_.pause();
    if (c.requeue_failed) s->requeue_retained();

    s->listener_ = listen(c.listen, ListenOptions{s->regions_, s->counters_, c.faults});
    s->log_.event("listening", {}, s->listener_->endpoint().to_string());
    s->acceptor_ = std::thread([p = s.get()] { p->accept_loop(); });
    for (std::uint32_t i = 0; i < c.forward_workers; ++i) {
        s->forwarders_.emplace_back([p = s.get()] { p->forward_loop(); });
    }
    return s;
}

StagingServer::~StagingServer() {
    shutdown();
    // Backings hold the store; drop them first.
    std::lock_guard lk(mu_);
    datasets_.clear();
}

Endpoint StagingServer::endpoint() const { return listener_->endpoint(); }

void StagingServer::pause_forwarding() { queue_.pause(); }
void StagingServer::resume_forwarding() { queue_.resume(); }

bool StagingServer::wait_idle(Millis timeout) {
    std::unique_lock lk(mu_);
    return cv_.wait_for(lk, timeout, [&] { return datasets_.empty() && unsettled_.empty() && forwarding_now_ == 0; });
}

void StagingServer::shutdown() {
    {
        std::lock_guard lk(mu_);
        if (stopped_) return;
        stopped_ = true;
    }
    const auto deadline = Clock::now() + config_.shutdown_grace;
    // Let sessions that are mid-transfer finish, and queued forwards go out.
    while (Clock::now() < deadline) {
        std::vector<std::shared_ptr<Dataset>> all;
        bool forwarding = false;
        {
            std::lock_guard lk(mu_);
            for (const auto& [_, ds] : datasets_) all.push_back(ds);
            forwarding = !unsettled_.empty() && !queue_.paused();
        }
        bool receiving = false;
        for (const auto& ds : all) {
            std::lock_guard lk(ds->mu);
            receiving = receiving || in_progress(ds->fsm.phase);
        }
        if (!receiving && !forwarding) break;
        std::this_thread::sleep_for(Millis{20});
    }
    {
        std::lock_guard lk(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (listener_) listener_->close();
    if (acceptor_.joinable()) acceptor_.join();
    {
        std::lock_guard lk(sessions_mu_);
        for (auto& w : channels_) {
            if (auto ch = w.lock()) ch->close();
        }
    }
    for (auto& t : session_threads_) {
        if (t.thread.joinable()) t.thread.join();
    }
    queue_.close();
    cv_.notify_all();
    for (auto& t : forwarders_) {
        if (t.joinable()) t.join();
    }
    log_.event("shutdown");
}

void StagingServer::accept_loop() {
    while (!stopping_) {
        auto ch = listener_->accept(Millis{100});
        if (!ch) continue;
        std::shared_ptr<Channel> shared(std::move(ch));
        {
            std::lock_guard lk(mu_);
            ++sessions_accepted_;
        }
        std::lock_guard lk(sessions_mu_);
        std::erase_if(channels_, [](const auto& w) { return w.expired(); });
        std::erase_if(session_threads_, [](SessionThread& t) {
            if (!t.done->load()) return false;
            t.thread.join();
            return true;
        });
        channels_.push_back(shared);
        auto done = std::make_shared<std::atomic<bool>>(false);
        session_threads_.push_back({std::thread([this, shared, done] {
                                        session_loop(shared);
                                        *done = true;
                                    }),
                                    done});
    }
}

// ---------------------------------------------------------------- sessions

void StagingServer::session_loop(std::shared_ptr<Channel> ch) {
    std::set<std::uint32_t> owned;  // datasets announced here and not yet done
    auto last_activity = Clock::now();
    while (!stopping_) {
        std::vector<std::byte> raw;
        try {
            raw = ch->recv(Millis{200});
        } catch (const Error& e) {
            if (e.code() != Errc::timeout) break;
            if (!owned.empty() && Clock::now() - last_activity > config_.idle_timeout) {
                reap(owned, "idle timeout");
                owned.clear();
                break;
            }
            continue;
        }
        last_activity = Clock::now();
        ch->poll_completions(1024, Millis{0});

        Message msg;
        try {
            msg = decode(raw);
        } catch (const DecodeError& e) {
            log_.event("bad_frame", {}, e.what());
            try {
                ch->send(encode(ErrorFrame{static_cast<std::uint16_t>(Status::protocol_violation), e.what()}));
            } catch (const Error&) {
                break;
            }
            continue;
        }
        try {
            on_frame(*ch, msg, owned);
        } catch (const Error& e) {
            log_.event("session_error", {}, e.what());
            break;
        }
    }
    reap(owned, "disconnect");
    ch->close();
}

void StagingServer::on_frame(Channel& ch, const Message& msg, std::set<std::uint32_t>& owned) {
    auto violation = [&](std::string text) {
        ch.send(encode(ErrorFrame{static_cast<std::uint16_t>(Status::protocol_violation), std::move(text)}));
    };
    auto dataset_for = [&](std::uint32_t id) -> std::shared_ptr<Dataset> {
        auto ds = find(id);
        if (ds && ds->channel != ch.id()) return nullptr;
        return ds;
    };

    if (const auto* a = std::get_if<Announce>(&msg)) {
        on_announce(ch, *a, owned);
    } else if (const auto* r = std::get_if<BlockReq>(&msg)) {
        auto ds = dataset_for(r->dataset_id);
        if (!ds) return violation("unknown dataset id " + std::to_string(r->dataset_id));
        std::lock_guard lk(ds->mu);
        ++ds->block_requests;
        apply(*ds, server_event::BlockRequested{*r}, &ch);
    } else if (const auto* d = std::get_if<DatasetDone>(&msg)) {
        auto ds = dataset_for(d->dataset_id);
        if (!ds) return violation("unknown dataset id " + std::to_string(d->dataset_id));
        std::lock_guard lk(ds->mu);
        server_event::DoneReceived done;
        if (regions_->accounting()) {
            std::uint64_t total = 0;
            for (const auto& [_, g] : ds->fsm.grants) total += regions_->bytes_written(g.region_token).value_or(0);
            done.bytes_accounted = total;
        }
        done.checksum = ds->backing ? fnv1a(ds->backing->bytes()) : Fnv1a::kOffsetBasis;
        apply(*ds, done, &ch);
        if (!in_progress(ds->fsm.phase)) owned.erase(d->dataset_id);
    } else if (const auto* c = std::get_if<Command>(&msg)) {
        ch.send(encode(on_command(c->text)));
    } else if (const auto* e = std::get_if<ErrorFrame>(&msg)) {
        log_.event("client_error", {}, e->text);
        reap(owned, "client reported an error");
        owned.clear();
    } else {
        violation("unexpected " + describe(msg));
    }
}

void StagingServer::on_announce(Channel& ch, const Announce& a, std::set<std::uint32_t>& owned) {
    const auto& desc = a.descriptor;
    auto reply = [&](Status s, std::uint32_t id) { ch.send(encode(AnnounceAck{s, id})); };
    if (desc.name.empty() || a.block_size == 0 || a.block_size > kMaxMessage) {
        log_.event("announce_rejected", desc.name, "bad name or block size");
        return reply(Status::protocol_violation, 0);
    }

    std::uint32_t id = 0;
    {
        std::lock_guard lk(mu_);
        if (stopping_) return reply(Status::internal, 0);
        if (active_names_.contains(desc.name)) {
            log_.event("announce_rejected", desc.name, "duplicate name");
            return reply(Status::duplicate_name, 0);
        }
        id = ++next_id_;
        active_names_.emplace(desc.name, id);
    }

    std::unique_ptr<Backing> backing;
    Status failure = Status::ok;
    std::string why;
    try {
        backing = store_->allocate(id, desc.total_size);
    } catch (const Error& e) {
        failure = e.code() == Errc::capacity ? Status::capacity : Status::internal;
        why = e.what();
    }
    if (failure != Status::ok) {
        {
            std::lock_guard lk(mu_);
            active_names_.erase(desc.name);
        }
        log_.event("announce_rejected", desc.name, why);
        return reply(failure, 0);
    }

    auto ds = std::make_shared<Dataset>();
    ds->fsm = make_server_session(id, desc, a.block_size);
    ds->tier = backing->tier();
    ds->backing = std::move(backing);
    ds->channel = ch.id();
    {
        std::lock_guard lk(mu_);
        datasets_.emplace(id, ds);
        ++datasets_announced_;
    }
    owned.insert(id);
    log_.event("announce", desc.name,
               "id=" + std::to_string(id) + " size=" + std::to_string(desc.total_size) +
                   " tier=" + std::string(to_string(ds->tier)));
    reply(Status::ok, id);
}

void StagingServer::reap(const std::set<std::uint32_t>& owned, const char* why) {
    for (auto id : owned) {
        auto ds = find(id);
        if (!ds) continue;
        std::lock_guard lk(ds->mu);
        if (!in_progress(ds->fsm.phase)) continue;
        apply(*ds, server_event::Abandoned{}, nullptr);
        {
            std::lock_guard g(mu_);
            ++datasets_reaped_;
        }
        log_.event("reaped", ds->fsm.descriptor.name, why);
    }
}

// ---------------------------------------------------------------- FSM actions

void StagingServer::apply(Dataset& ds, const ServerEvent& event, Channel* ch) {
    const auto id = ds.fsm.dataset_id;
    const std::string name = ds.fsm.descriptor.name;
    std::deque<ServerEvent> pending{event};
    while (!pending.empty()) {
        auto step = server_step(std::move(ds.fsm), pending.front());
        pending.pop_front();
        ds.fsm = std::move(step.state);

        for (auto& action : step.actions) {
            if (auto* send = std::get_if<SendFrame>(&action)) {
                if (ch) ch->send(encode(send->frame));
                if (const auto* sync = std::get_if<SyncAck>(&send->frame); sync && sync->status != Status::ok) {
                    log_.event("sync_rejected", name, std::string(to_string(sync->status)));
                }
            } else if (auto* reg = std::get_if<RegisterRegion>(&action)) {
                auto region = regions_->register_region(ds.backing->bytes().subspan(reg->offset, reg->length));
                pending.push_back(server_event::RegionRegistered{
                    BlockGrant{id, reg->block_index, region.token, region.access_key, region.length}});
            } else if (auto* dereg = std::get_if<DeregisterAll>(&action)) {
                for (auto token : dereg->tokens) regions_->erase(token);
            } else if (std::holds_alternative<EnqueueForward>(action)) {
                {
                    std::lock_guard lk(mu_);
                    // Recorded before a forwarder can possibly settle it.
                    auto seq = queue_.push(id);
                    if (!seq) throw Error(Errc::protocol, "dataset " + std::to_string(id) + " queued twice");
                    ds.arrival_seq = *seq;
                    unsettled_.insert(*seq);
                    last_completed_seq_ = *seq;
                }
                log_.event("complete", name, "arrival_seq=" + std::to_string(*ds.arrival_seq));
                pending.push_back(server_event::Enqueued{});
            } else if (std::holds_alternative<ReleaseBacking>(action)) {
                ds.backing.reset();
                if (ds.fsm.phase == ServerPhase::forwarded) pending.push_back(server_event::BackingRemoved{});
            } else if (std::holds_alternative<RetainBacking>(action)) {
                nlohmann::json meta = {{"dataset_id", id},
                                       {"name", name},
                                       {"element_type", ds.fsm.descriptor.element_type},
                                       {"total_size", ds.fsm.descriptor.total_size},
                                       {"checksum", ds.fsm.descriptor.checksum},
                                       {"block_size", ds.fsm.block_size}};
                try {
                    auto sidecar = store_->retain(std::move(ds.backing), id, meta.dump());
                    log_.event("retained", name, sidecar.string());
                } catch (const Error& e) {
                    log_.event("retain_failed", name, e.what());
                }
            }
        }
    }

    if (is_terminal(ds.fsm.phase)) {
        if (ds.fsm.phase == ServerPhase::removed && !ds.sidecar.empty()) {
            std::error_code ec;
            fs::remove(ds.sidecar, ec);
        }
        std::lock_guard lk(mu_);
        datasets_.erase(id);
        if (auto it = active_names_.find(name); it != active_names_.end() && it->second == id) active_names_.erase(it);
        cv_.notify_all();
    }
}

// ---------------------------------------------------------------- forwarding

void StagingServer::forward_loop() {
    while (auto ticket = queue_.pop()) {
        auto ds = find(ticket->dataset_id);
        if (!ds) {
            queue_.begin_start(ticket->seq);
            queue_.end_start(ticket->seq);
            continue;
        }
        {
            std::lock_guard lk(mu_);
            ++forwarding_now_;
        }
        ForwardRecord rec;
        {
            std::lock_guard lk(ds->mu);
            apply(*ds, server_event::ForwardStarted{}, nullptr);
            rec.dataset_id = ds->fsm.dataset_id;
            rec.name = ds->fsm.descriptor.name;
        }
        rec.arrival_seq = ticket->seq;
        log_.event("forward_start", rec.name, "arrival_seq=" + std::to_string(ticket->seq));

        bool ok = false;
        for (std::uint32_t attempt = 0;; ++attempt) {
            ++rec.attempts;
            std::string detail;
            ok = forward_once(*ds, attempt == 0 ? std::optional(ticket->seq) : std::nullopt, detail);
            rec.detail = detail;
            if (ok || attempt >= config_.retry_limit || stopping_) break;
            ++rec.retries;
            log_.event("forward_retry", rec.name, "attempt=" + std::to_string(attempt + 1) + " " + detail);
            {
                std::lock_guard lk(ds->mu);
                apply(*ds, server_event::ForwardRetry{}, nullptr);
            }
            std::this_thread::sleep_for(config_.retry_backoff);
            {
                std::lock_guard lk(ds->mu);
                apply(*ds, server_event::ForwardStarted{}, nullptr);
            }
        }
        rec.ok = ok;
        {
            std::lock_guard lk(ds->mu);
            if (ok) {
                apply(*ds, server_event::ForwardSucceeded{}, nullptr);
            } else {
                apply(*ds, server_event::ForwardFailed{}, nullptr);
            }
        }
        log_.event(ok ? "forwarded" : "forward_failed", rec.name,
                   "attempts=" + std::to_string(rec.attempts) + (ok ? "" : " " + rec.detail));
        {
            std::lock_guard lk(mu_);
            unsettled_.erase(ticket->seq);
            if (!ok) unreported_failures_.emplace(ticket->seq, "dataset '" + rec.name + "' was not forwarded: " + rec.detail);
            forward_log_.push_back(std::move(rec));
            --forwarding_now_;
        }
        cv_.notify_all();
    }
}

bool StagingServer::forward_once(Dataset& ds, std::optional<std::uint64_t> start_seq, std::string& detail) {
    if (!config_.forward_target) {
        if (start_seq) {
            queue_.begin_start(*start_seq);
            queue_.end_start(*start_seq);
        }
        detail = "no forward target configured";
        return false;
    }
    DatasetDescriptor desc;
    std::span<const std::byte> payload;
    {
        std::lock_guard lk(ds.mu);
        desc = ds.fsm.descriptor;
        if (ds.backing) payload = ds.backing->bytes();
    }

    std::unique_ptr<ByteStream> stream;
    try {
        stream = dial_stream(*config_.forward_target, config_.sink_timeout);
    } catch (const Error& e) {
        detail = std::string("sink unreachable: ") + e.what();
    }
    if (start_seq) queue_.begin_start(*start_seq);
    if (stream) {
        try {
            write_message(*stream, Load{desc});
        } catch (const Error& e) {
            detail = e.what();
            stream.reset();
        }
    }
    if (start_seq) queue_.end_start(*start_seq);
    if (!stream) return false;

    try {
        // Single pass through one bounded relay buffer.
        std::vector<std::byte> relay(std::min<std::size_t>(config_.relay_buffer, std::max<std::size_t>(payload.size(), 1)));
        for (std::size_t off = 0; off < payload.size();) {
            const auto n = std::min(relay.size(), payload.size() - off);
            std::memcpy(relay.data(), payload.data() + off, n);
            stream->write_all({relay.data(), n});
            off += n;
        }
        auto reply = read_message(*stream, config_.sink_timeout);
        stream->shutdown();
        const auto* ack = std::get_if<LoadAck>(&reply);
        if (!ack) {
            detail = "unexpected reply " + describe(reply);
            return false;
        }
        if (ack->status != Status::ok) {
            detail = "sink answered " + std::string(to_string(ack->status));
            return false;
        }
        if (ack->checksum != desc.checksum) {
            detail = "sink checksum differs";
            return false;
        }
        return true;
    } catch (const Error& e) {
        detail = e.what();
        return false;
    }
}

void StagingServer::requeue_retained() {
    for (const auto& sidecar : store_->retained()) {
        nlohmann::json meta;
        try {
            std::ifstream in(sidecar);
            meta = nlohmann::json::parse(in);
        } catch (const std::exception& e) {
            log_.event("requeue_skipped", {}, sidecar.string() + ": " + e.what());
            continue;
        }
        auto payload_path = sidecar.string();
        payload_path.resize(payload_path.size() - std::string_view(".failed.json").size());
        payload_path += ".dat";

        DatasetDescriptor desc{meta.value("name", std::string{}), meta.value("element_type", std::string{}),
                               meta.value("total_size", std::uint64_t{0}), meta.value("checksum", std::uint64_t{0})};
        const auto block_size = std::max<std::uint64_t>(meta.value("block_size", std::uint64_t{1}), 1);
        std::unique_ptr<Backing> backing;
        try {
            backing = store_->adopt(payload_path);
        } catch (const Error& e) {
            log_.event("requeue_skipped", desc.name, e.what());
            continue;
        }
        if (backing->size() != desc.total_size || desc.name.empty()) {
            log_.event("requeue_skipped", desc.name, "payload does not match its sidecar");
            continue;
        }

        auto ds = std::make_shared<Dataset>();
        std::uint32_t id = 0;
        {
            std::lock_guard lk(mu_);
            if (active_names_.contains(desc.name)) continue;
            id = ++next_id_;
            active_names_.emplace(desc.name, id);
            datasets_.emplace(id, ds);
        }
        std::lock_guard lk(ds->mu);
        ds->fsm = make_server_session(id, desc, block_size);
        ds->fsm.phase = ServerPhase::complete;  // restored, not replayed
        ds->tier = Tier::disk;
        ds->backing = std::move(backing);
        ds->sidecar = sidecar;
        {
            std::lock_guard g(mu_);
            auto seq = queue_.push(id);
            ds->arrival_seq = *seq;
            unsettled_.insert(*seq);
            last_completed_seq_ = *seq;
        }
        apply(*ds, server_event::Enqueued{}, nullptr);
        log_.event("requeued", desc.name, sidecar.string());
    }
}

// ---------------------------------------------------------------- commands

CommandResponse StagingServer::on_command(const std::string& text) {
    if (config_.command_barrier) {
        std::unique_lock lk(mu_);
        if (last_completed_seq_) {
            const auto target = *last_completed_seq_;
            cv_.wait(lk, [&] { return stopping_ || unsettled_.empty() || *unsettled_.begin() > target; });
            std::string failed;
            for (auto it = unreported_failures_.begin(); it != unreported_failures_.end() && it->first <= target;) {
                failed += (failed.empty() ? "" : "; ") + it->second;
                it = unreported_failures_.erase(it);
            }
            if (!failed.empty()) {
                log_.event("command_refused", {}, failed);
                return {Status::internal, failed};
            }
        }
    }
    if (!config_.forward_target) return {Status::internal, "no sink configured"};
    try {
        auto stream = dial_stream(*config_.forward_target, config_.sink_timeout);
        write_message(*stream, Command{text});
        auto reply = read_message(*stream, config_.sink_timeout);
        stream->shutdown();
        {
            std::lock_guard lk(mu_);
            ++commands_relayed_;
        }
        log_.event("command", {}, text);
        if (auto* resp = std::get_if<CommandResponse>(&reply)) return std::move(*resp);
        if (auto* err = std::get_if<ErrorFrame>(&reply)) return {Status::internal, err->text};
        return {Status::internal, "unexpected sink reply " + describe(reply)};
    } catch (const Error& e) {
        return {Status::internal, std::string("sink unreachable: ") + e.what()};
    }
}

// ---------------------------------------------------------------- observability

std::shared_ptr<StagingServer::Dataset> StagingServer::find(std::uint32_t id) const {
    std::lock_guard lk(mu_);
    auto it = datasets_.find(id);
    return it == datasets_.end() ? nullptr : it->second;
}

DatasetSnapshot StagingServer::snapshot_locked(const Dataset& ds) const {
    DatasetSnapshot s;
    s.dataset_id = ds.fsm.dataset_id;
    s.name = ds.fsm.descriptor.name;
    s.phase = ds.fsm.phase;
    s.tier = ds.tier;
    s.total_size = ds.fsm.descriptor.total_size;
    s.arrival_seq = ds.arrival_seq;
    s.block_requests = ds.block_requests;
    if (in_progress(ds.fsm.phase)) {
        for (const auto& [_, g] : ds.fsm.grants) {
            if (auto r = regions_->lookup(g.region_token); r && r->registered) ++s.regions_registered;
        }
        if (regions_->accounting()) {
            std::uint64_t total = 0;
            for (const auto& [_, g] : ds.fsm.grants) total += regions_->bytes_written(g.region_token).value_or(0);
            s.bytes_accounted = total;
        }
    }
    return s;
}

std::vector<DatasetSnapshot> StagingServer::datasets() const {
    std::vector<std::shared_ptr<Dataset>> all;
    {
        std::lock_guard lk(mu_);
        for (const auto& [_, ds] : datasets_) all.push_back(ds);
    }
    std::vector<DatasetSnapshot> out;
    for (const auto& ds : all) {
        std::lock_guard lk(ds->mu);
        out.push_back(snapshot_locked(*ds));
    }
    return out;
}

std::optional<DatasetSnapshot> StagingServer::dataset(const std::string& name) const {
    std::shared_ptr<Dataset> ds;
    {
        std::lock_guard lk(mu_);
        auto it = active_names_.find(name);
        if (it == active_names_.end()) return std::nullopt;
        auto d = datasets_.find(it->second);
        if (d == datasets_.end()) return std::nullopt;
        ds = d->second;
    }
    std::lock_guard lk(ds->mu);
    return snapshot_locked(*ds);
}

FrameCounts StagingServer::frame_counts() const { return counters_->snapshot(); }

ServerStats StagingServer::stats() const {
    ServerStats s;
    s.store = store_->stats();
    std::lock_guard lk(mu_);
    s.sessions_accepted = sessions_accepted_;
    s.datasets_announced = datasets_announced_;
    s.datasets_reaped = datasets_reaped_;
    s.commands_relayed = commands_relayed_;
    s.active_datasets = datasets_.size();
    s.queued = queue_.size();
    return s;
}

std::vector<ForwardRecord> StagingServer::forward_log() const {
    std::lock_guard lk(mu_);
    return forward_log_;
}

}  // namespace staging
