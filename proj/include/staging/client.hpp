#pragma once

// Client-side staging handle. write() only queues a task; a pool of I/O
// workers, each on its own channel, runs the protocol session for it. The
// caller's buffer is referenced, never copied, and must stay untouched until
// the task leaves in_flight (sync() is the usual way to wait for that).

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "staging/endpoint.hpp"
#include "staging/transport.hpp"
#include "staging/wire.hpp"

namespace staging {

inline constexpr std::uint64_t kMinBlockSize = 4 * 1024;
inline constexpr std::uint64_t kMaxBlockSize = kMaxMessage;
inline constexpr std::uint64_t kDefaultBlockSize = 256ull << 20;

struct ClientOptions {
    std::uint32_t worker_count = 1;
    std::uint64_t block_size = kDefaultBlockSize;
    std::uint32_t pipeline_depth = 2;
    Millis handshake_timeout = kDefaultHandshakeTimeout;
    // Longest silence tolerated from the server inside a session.
    Millis reply_timeout = kDefaultIdleTimeout;
    // Commands may wait for forwarding, so they get a longer leash.
    Millis command_timeout{300'000};
    // Applied to every worker channel (gating and corruption in tests).
    std::shared_ptr<FaultInjector> faults;
    // Honour STAGING_BLOCK_SIZE / STAGING_WORKERS.
    bool env_overrides = true;
};

struct DatasetHandle {
    std::string name;
    std::string element_type = "double";
};

enum class TaskState { queued, in_flight, acked, failed };

std::string_view to_string(TaskState state) noexcept;

class TransferTask {
  public:
    using Clock = std::chrono::steady_clock;

    TransferTask(DatasetHandle dataset, std::span<const std::byte> buffer);

    const DatasetHandle& dataset() const noexcept { return dataset_; }
    std::span<const std::byte> buffer() const noexcept { return buffer_; }

    TaskState state() const noexcept { return state_.load(); }
    bool finished() const noexcept;
    // Status of the failed session, ok otherwise.
    wire::Status status() const;
    std::string reason() const;
    std::uint32_t dataset_id() const;

    Clock::time_point created_at() const noexcept { return created_; }
    Clock::time_point finished_at() const;

    // Blocks until acked or failed.
    TaskState wait() const;

  private:
    friend class ServerHandle;

    void start();
    void finish(wire::Status status, std::string reason, std::uint32_t dataset_id);

    DatasetHandle dataset_;
    std::span<const std::byte> buffer_;
    std::atomic<TaskState> state_{TaskState::queued};
    Clock::time_point created_;

    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    wire::Status status_ = wire::Status::ok;
    std::string reason_;
    std::uint32_t dataset_id_ = 0;
    Clock::time_point finished_;
    bool reported_ = false;
};

struct TaskOutcome {
    std::string name;
    TaskState state = TaskState::acked;
    wire::Status status = wire::Status::ok;
    std::string reason;
};

struct SyncReport {
    std::vector<TaskOutcome> tasks;

    std::size_t acked() const;
    std::size_t failed() const;
    bool all_acked() const { return failed() == 0; }
};

struct ClientStats {
    std::uint64_t bytes_sourced = 0;      // bytes read from caller buffers by one-sided writes
    std::uint32_t max_in_flight = 0;      // peak concurrently running sessions
    std::uint64_t sessions_started = 0;
    std::uint64_t reconnects = 0;
};

class ServerHandle {
  public:
    // Connects the control channel and one channel per worker. Throws
    // Errc::argument for bad options and Errc::connection when unreachable.
    static std::unique_ptr<ServerHandle> open(const Endpoint& endpoint, ClientOptions options = {});

    ~ServerHandle();
    ServerHandle(const ServerHandle&) = delete;
    ServerHandle& operator=(const ServerHandle&) = delete;

    const Endpoint& endpoint() const noexcept { return endpoint_; }
    const ClientOptions& options() const noexcept { return options_; }

    // Queues the dataset and returns at once. Throws Errc::duplicate while a
    // task with the same name is still queued or in flight.
    std::shared_ptr<TransferTask> write(const DatasetHandle& dataset, std::span<const std::byte> buffer);

    // Waits for every task created before the call that has not been reported
    // by an earlier sync, and reports their outcomes.
    SyncReport sync();

    // Relays a command through staging to the sink and returns its response.
    // Throws Errc::connection / Errc::closed / Errc::timeout on transport failure.
    wire::CommandResponse run_savime(std::string_view command);

    ClientStats stats() const;
    // Dataset names in the order their sessions started.
    std::vector<std::string> dispatch_order() const;

  private:
    ServerHandle(Endpoint endpoint, ClientOptions options);

    struct Worker {
        std::unique_ptr<Channel> channel;
        std::uint64_t retired_bytes = 0;  // sourced bytes of channels replaced after failures
        std::thread thread;
    };

    void worker_loop(Worker& worker);
    void run_session(Worker& worker, TransferTask& task);
    void reconnect(Worker& worker);

    Endpoint endpoint_;
    ClientOptions options_;

    std::mutex control_mu_;
    std::unique_ptr<Channel> control_;

    mutable std::mutex mu_;
    std::condition_variable queue_cv_;
    std::condition_variable done_cv_;
    std::deque<std::shared_ptr<TransferTask>> queue_;
    std::vector<std::shared_ptr<TransferTask>> tasks_;
    std::vector<std::string> dispatch_order_;
    bool stopping_ = false;
    std::uint32_t in_flight_ = 0;
    std::uint32_t max_in_flight_ = 0;
    std::uint64_t sessions_started_ = 0;
    std::uint64_t reconnects_ = 0;

    std::vector<std::unique_ptr<Worker>> workers_;
};

}  // namespace staging
