#include "staging/client.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <map>

#include "staging/fnv1a.hpp"
#include "staging/session.hpp"

namespace staging {

using namespace wire;

std::string_view to_string(TaskState state) noexcept {
    switch (state) {
        case TaskState::queued: return "queued";
        case TaskState::in_flight: return "in_flight";
        case TaskState::acked: return "acked";
        case TaskState::failed: return "failed";
    }
    return "unknown";
}

// ---------------------------------------------------------------- task

TransferTask::TransferTask(DatasetHandle dataset, std::span<const std::byte> buffer)
    : dataset_(std::move(dataset)), buffer_(buffer), created_(Clock::now()) {}

bool TransferTask::finished() const noexcept {
    auto s = state_.load();
    return s == TaskState::acked || s == TaskState::failed;
}

Status TransferTask::status() const {
    std::lock_guard lk(mu_);
    return status_;
}

std::string TransferTask::reason() const {
    std::lock_guard lk(mu_);
    return reason_;
}

std::uint32_t TransferTask::dataset_id() const {
    std::lock_guard lk(mu_);
    return dataset_id_;
}

TransferTask::Clock::time_point TransferTask::finished_at() const {
    std::lock_guard lk(mu_);
    return finished_;
}

TaskState TransferTask::wait() const {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return finished(); });
    return state_.load();
}

void TransferTask::start() { state_ = TaskState::in_flight; }

void TransferTask::finish(Status status, std::string reason, std::uint32_t dataset_id) {
    std::lock_guard lk(mu_);
    status_ = status;
    reason_ = std::move(reason);
    dataset_id_ = dataset_id;
    finished_ = Clock::now();
    state_ = status == Status::ok ? TaskState::acked : TaskState::failed;
    cv_.notify_all();
}

std::size_t SyncReport::acked() const {
    return static_cast<std::size_t>(
        std::count_if(tasks.begin(), tasks.end(), [](const auto& t) { return t.state == TaskState::acked; }));
}

std::size_t SyncReport::failed() const { return tasks.size() - acked(); }

// ---------------------------------------------------------------- handle

namespace {

template <class T>
bool env_number(const char* name, T& out) {
    const char* raw = std::getenv(name);
    if (!raw || !*raw) return false;
    std::string_view text(raw);
    T value{};
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        throw Error(Errc::argument, std::string(name) + " is not a number: " + raw);
    }
    out = value;
    return true;
}

void validate(const ClientOptions& o) {
    if (o.worker_count < 1) throw Error(Errc::argument, "worker_count must be at least 1");
    if (o.block_size < kMinBlockSize || o.block_size > kMaxBlockSize) {
        throw Error(Errc::argument, "block_size " + std::to_string(o.block_size) + " outside [4 KiB, 2 GiB]");
    }
    if (o.pipeline_depth < 1) throw Error(Errc::argument, "pipeline_depth must be at least 1");
}

ClientEvent to_event(const Message& msg) {
    if (const auto* m = std::get_if<AnnounceAck>(&msg)) return client_event::AckReceived{*m};
    if (const auto* m = std::get_if<BlockGrant>(&msg)) return client_event::GrantReceived{*m};
    if (const auto* m = std::get_if<SyncAck>(&msg)) return client_event::SyncReceived{*m};
    if (const auto* m = std::get_if<ErrorFrame>(&msg)) return client_event::ErrorReceived{*m};
    return client_event::TransportFailed{"unexpected " + describe(msg) + " on a worker channel"};
}

bool terminal(ClientPhase p) { return p == ClientPhase::synced || p == ClientPhase::failed; }

}  // namespace

ServerHandle::ServerHandle(Endpoint endpoint, ClientOptions options)
    : endpoint_(std::move(endpoint)), options_(std::move(options)) {}

std::unique_ptr<ServerHandle> ServerHandle::open(const Endpoint& endpoint, ClientOptions options) {
    if (options.env_overrides) {
        env_number("STAGING_BLOCK_SIZE", options.block_size);
        env_number("STAGING_WORKERS", options.worker_count);
    }
    validate(options);

    std::unique_ptr<ServerHandle> h(new ServerHandle(endpoint, options));
    ConnectOptions copts{options.handshake_timeout, nullptr};
    try {
        h->control_ = connect(endpoint, copts);
        copts.faults = options.faults;
        for (std::uint32_t i = 0; i < options.worker_count; ++i) {
            auto w = std::make_unique<Worker>();
            w->channel = connect(endpoint, copts);
            h->workers_.push_back(std::move(w));
        }
    } catch (const Error& e) {
        throw Error(e.code() == Errc::timeout ? Errc::timeout : Errc::connection,
                    "cannot open staging handle to " + endpoint.to_string() + ": " + e.what());
    }
    for (auto& w : h->workers_) {
        Worker* raw = w.get();
        raw->thread = std::thread([hp = h.get(), raw] { hp->worker_loop(*raw); });
    }
    return h;
}

ServerHandle::~ServerHandle() {
    {
        std::unique_lock lk(mu_);
        // Buffers belong to the caller; never abandon a task that may still read one.
        done_cv_.wait(lk, [&] { return queue_.empty() && in_flight_ == 0; });
        stopping_ = true;
    }
    queue_cv_.notify_all();
    for (auto& w : workers_) {
        if (w->thread.joinable()) w->thread.join();
    }
    if (control_) control_->close();
    for (auto& w : workers_) {
        if (w->channel) w->channel->close();
    }
}

std::shared_ptr<TransferTask> ServerHandle::write(const DatasetHandle& dataset, std::span<const std::byte> buffer) {
    if (dataset.name.empty() || dataset.name.size() > kMaxNameLength) {
        throw Error(Errc::argument, "dataset name must be 1-255 bytes");
    }
    if (dataset.element_type.size() > kMaxTypeLength) throw Error(Errc::argument, "element type exceeds 63 bytes");
    auto task = std::make_shared<TransferTask>(dataset, buffer);
    {
        std::lock_guard lk(mu_);
        if (stopping_) throw Error(Errc::closed, "handle is closing");
        for (const auto& t : tasks_) {
            if (t->dataset().name == dataset.name && !t->finished()) {
                throw Error(Errc::duplicate, "dataset '" + dataset.name + "' already has an active write");
            }
        }
        tasks_.push_back(task);
        queue_.push_back(task);
    }
    queue_cv_.notify_one();
    return task;
}

SyncReport ServerHandle::sync() {
    std::vector<std::shared_ptr<TransferTask>> awaited;
    {
        std::lock_guard lk(mu_);
        for (const auto& t : tasks_) {
            if (!t->reported_) awaited.push_back(t);
        }
        for (const auto& t : awaited) t->reported_ = true;
        // Finished tasks that were reported no longer need tracking.
        std::erase_if(tasks_, [](const auto& t) { return t->reported_ && t->finished(); });
    }
    SyncReport report;
    for (const auto& t : awaited) {
        auto state = t->wait();
        report.tasks.push_back({t->dataset().name, state, t->status(), t->reason()});
    }
    {
        std::lock_guard lk(mu_);
        std::erase_if(tasks_, [](const auto& t) { return t->reported_ && t->finished(); });
    }
    return report;
}

CommandResponse ServerHandle::run_savime(std::string_view command) {
    std::lock_guard lk(control_mu_);
    if (!control_ || control_->state() != ChannelState::established) {
        throw Error(Errc::closed, "control channel is not established");
    }
    control_->send(encode(Command{std::string(command)}));
    auto reply = decode(control_->recv(options_.command_timeout));
    control_->poll_completions(64, Millis{0});
    if (auto* resp = std::get_if<CommandResponse>(&reply)) return std::move(*resp);
    if (auto* err = std::get_if<ErrorFrame>(&reply)) {
        auto status = err->code <= static_cast<std::uint16_t>(Status::internal) ? static_cast<Status>(err->code)
                                                                               : Status::internal;
        return {status, err->text};
    }
    throw Error(Errc::protocol, "unexpected reply to CMD: " + describe(reply));
}

ClientStats ServerHandle::stats() const {
    ClientStats s;
    std::lock_guard lk(mu_);
    for (const auto& w : workers_) {
        s.bytes_sourced += w->retired_bytes + (w->channel ? w->channel->stats().bytes_sourced : 0);
    }
    s.max_in_flight = max_in_flight_;
    s.sessions_started = sessions_started_;
    s.reconnects = reconnects_;
    return s;
}

std::vector<std::string> ServerHandle::dispatch_order() const {
    std::lock_guard lk(mu_);
    return dispatch_order_;
}

void ServerHandle::worker_loop(Worker& worker) {
    for (;;) {
        std::shared_ptr<TransferTask> task;
        {
            std::unique_lock lk(mu_);
            queue_cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            task = std::move(queue_.front());
            queue_.pop_front();
            ++in_flight_;
            max_in_flight_ = std::max(max_in_flight_, in_flight_);
            ++sessions_started_;
            dispatch_order_.push_back(task->dataset().name);
            task->start();
        }
        run_session(worker, *task);
        {
            std::lock_guard lk(mu_);
            --in_flight_;
        }
        done_cv_.notify_all();
    }
}

void ServerHandle::reconnect(Worker& worker) {
    std::uint64_t sourced = 0;
    if (worker.channel) {
        sourced = worker.channel->stats().bytes_sourced;
        worker.channel->close();
    }
    std::unique_ptr<Channel> fresh;
    try {
        fresh = connect(endpoint_, ConnectOptions{options_.handshake_timeout, options_.faults});
    } catch (const Error&) {
        // Left null; the next session reports the failure and tries again.
    }
    std::lock_guard lk(mu_);
    worker.retired_bytes += sourced;
    worker.channel = std::move(fresh);
    ++reconnects_;
}

void ServerHandle::run_session(Worker& worker, TransferTask& task) {
    const auto buffer = task.buffer();
    if (!worker.channel || worker.channel->state() != ChannelState::established) reconnect(worker);
    if (!worker.channel) {
        task.finish(Status::internal, "staging server unreachable", 0);
        return;
    }
    Channel& ch = *worker.channel;

    DatasetDescriptor descriptor{task.dataset().name, task.dataset().element_type, buffer.size(), fnv1a(buffer)};
    auto session = make_client_session(descriptor, options_.block_size, options_.pipeline_depth);

    std::map<std::uint64_t, std::uint32_t> writes;  // op id -> block index
    std::deque<ClientEvent> events{client_event::Start{}};
    Finish outcome;
    // Set when the failure leaves the channel out of step with the server.
    bool desynced = false;

    auto execute = [&](const ClientAction& action) {
        if (const auto* f = std::get_if<Finish>(&action)) {
            outcome = *f;
            return;
        }
        try {
            if (const auto* s = std::get_if<SendFrame>(&action)) {
                ch.send(encode(s->frame));
            } else if (const auto* w = std::get_if<RemoteWrite>(&action)) {
                auto op = ch.remote_write(buffer.subspan(w->offset, w->length), w->grant.region_token,
                                          w->grant.access_key, 0);
                writes.emplace(op, w->grant.block_index);
            }
        } catch (const Error& e) {
            events.push_back(client_event::TransportFailed{e.what()});
        }
    };

    while (!terminal(session.phase)) {
        while (!events.empty() && !terminal(session.phase)) {
            const auto& ev = events.front();
            if (std::holds_alternative<client_event::TransportFailed>(ev) ||
                std::holds_alternative<client_event::ErrorReceived>(ev)) {
                desynced = true;
            }
            auto step = client_step(std::move(session), ev);
            events.pop_front();
            session = std::move(step.state);
            for (const auto& a : step.actions) execute(a);
        }
        if (terminal(session.phase)) break;

        for (const auto& c : ch.poll_completions(256, writes.empty() ? Millis{0} : Millis{1})) {
            if (c.kind != OpKind::remote_write) continue;
            auto it = writes.find(c.op_id);
            if (it == writes.end()) continue;
            events.push_back(client_event::WriteCompleted{it->second, c.ok()});
            writes.erase(it);
        }
        if (!events.empty()) continue;

        try {
            std::optional<std::vector<std::byte>> raw;
            if (writes.empty()) {
                raw = ch.recv(options_.reply_timeout);
            } else {
                raw = ch.try_recv();
            }
            if (raw) events.push_back(to_event(decode(*raw)));
        } catch (const Error& e) {
            events.push_back(client_event::TransportFailed{e.what()});
        }
    }

    // Writes still pending would touch the buffer after the task is released.
    const auto deadline = std::chrono::steady_clock::now() + options_.reply_timeout;
    while (!writes.empty() && ch.state() == ChannelState::established && std::chrono::steady_clock::now() < deadline) {
        for (const auto& c : ch.poll_completions(256, Millis{50})) writes.erase(c.op_id);
    }
    ch.poll_completions(1 << 16, Millis{0});

    if (outcome.status != Status::ok && (desynced || !writes.empty())) reconnect(worker);
    if (session.phase == ClientPhase::failed && outcome.status == Status::ok) outcome.status = Status::internal;
    task.finish(outcome.status, outcome.reason, session.dataset_id);
}

}  // namespace staging
