#pragma once

// Staging service: accepts protocol sessions, stages datasets in the store,
// forwards completed ones FCFS to the analytical sink, and relays commands.

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "staging/forward_queue.hpp"
#include "staging/log.hpp"
#include "staging/session.hpp"
#include "staging/store.hpp"
#include "staging/transport.hpp"

namespace staging {

struct ServerConfig {
    Endpoint listen = Endpoint::loopback("staging");
    StoreConfig store;
    std::optional<Endpoint> forward_target;
    std::uint32_t forward_workers = 2;
    std::uint32_t retry_limit = 3;
    Millis retry_backoff{100};
    std::size_t relay_buffer = 1 << 20;
    // Disables passive-side write accounting (closer to real RDMA).
    bool strict_one_sided = false;
    // Re-enqueue payloads retained by earlier failed forwards.
    bool requeue_failed = false;
    // Proxied commands wait for completed datasets to leave the forward queue.
    bool command_barrier = true;
    bool start_paused = false;
    Millis idle_timeout = kDefaultIdleTimeout;
    Millis shutdown_grace{30'000};
    Millis sink_timeout{30'000};
    std::uint64_t key_seed = 0x5eed;
    std::shared_ptr<ChannelObserver> observer;
    std::shared_ptr<FaultInjector> faults;
    std::ostream* log = nullptr;
};

// Frames seen by the server, per protocol tag and direction.
struct FrameCounts {
    std::array<std::uint64_t, 256> inbound{};   // client -> server
    std::array<std::uint64_t, 256> outbound{};  // server -> client
    std::uint64_t remote_writes = 0;
    std::uint64_t remote_write_bytes = 0;

    std::uint64_t in(wire::Tag t) const { return inbound[static_cast<std::uint8_t>(t)]; }
    std::uint64_t out(wire::Tag t) const { return outbound[static_cast<std::uint8_t>(t)]; }
    // ANNOUNCE .. SYNC_ACK in both directions.
    std::uint64_t control_frames() const;
    FrameCounts operator-(const FrameCounts& earlier) const;
};

struct DatasetSnapshot {
    std::uint32_t dataset_id = 0;
    std::string name;
    wire::ServerPhase phase = wire::ServerPhase::announced;
    Tier tier = Tier::memory;
    std::uint64_t total_size = 0;
    std::optional<std::uint64_t> bytes_accounted;
    std::optional<std::uint64_t> arrival_seq;
    std::size_t regions_registered = 0;
    std::uint64_t block_requests = 0;
};

struct ForwardRecord {
    std::uint32_t dataset_id = 0;
    std::string name;
    std::uint64_t arrival_seq = 0;
    std::uint32_t attempts = 0;
    std::uint32_t retries = 0;
    bool ok = false;
    std::string detail;
};

struct ServerStats {
    StoreStats store;
    std::uint64_t sessions_accepted = 0;
    std::uint64_t datasets_announced = 0;
    std::uint64_t datasets_reaped = 0;
    std::uint64_t commands_relayed = 0;
    std::size_t active_datasets = 0;
    std::size_t queued = 0;
};

class StagingServer {
  public:
    // Throws Error(Errc::io) for an unusable spill directory and
    // Error(Errc::connection) when the listen endpoint cannot be bound.
    static std::unique_ptr<StagingServer> start(ServerConfig config);

    ~StagingServer();
    StagingServer(const StagingServer&) = delete;
    StagingServer& operator=(const StagingServer&) = delete;

    Endpoint endpoint() const;
    const ServerConfig& config() const noexcept { return config_; }

    void pause_forwarding();
    void resume_forwarding();

    // True once nothing is announced, receiving or waiting to be forwarded.
    bool wait_idle(Millis timeout);
    // Cooperative drain, then stop. Idempotent.
    void shutdown();

    FrameCounts frame_counts() const;
    ServerStats stats() const;
    std::vector<DatasetSnapshot> datasets() const;
    std::optional<DatasetSnapshot> dataset(const std::string& name) const;
    std::vector<ForwardRecord> forward_log() const;
    std::vector<std::filesystem::path> live_files() const { return store_->live_files(); }
    // Registered regions across every dataset.
    std::size_t registered_regions() const { return regions_->registered_count(); }

  private:
    struct Dataset;
    class Counters;

    explicit StagingServer(ServerConfig config);

    void accept_loop();
    void session_loop(std::shared_ptr<Channel> channel);
    void on_frame(Channel& ch, const wire::Message& msg, std::set<std::uint32_t>& owned);
    void on_announce(Channel& ch, const wire::Announce& a, std::set<std::uint32_t>& owned);
    wire::CommandResponse on_command(const std::string& text);
    void reap(const std::set<std::uint32_t>& owned, const char* why);

    // Runs a server-FSM event and its actions. Caller holds ds.mu.
    void apply(Dataset& ds, const wire::ServerEvent& event, Channel* ch);
    void forward_loop();
    bool forward_once(Dataset& ds, std::optional<std::uint64_t> start_seq, std::string& detail);
    void requeue_retained();
    std::shared_ptr<Dataset> find(std::uint32_t id) const;
    DatasetSnapshot snapshot_locked(const Dataset& ds) const;

    ServerConfig config_;
    Log log_;
    std::unique_ptr<Store> store_;
    std::shared_ptr<RegionTable> regions_;
    std::shared_ptr<Counters> counters_;
    std::unique_ptr<ChannelListener> listener_;
    ForwardQueue queue_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::uint32_t, std::shared_ptr<Dataset>> datasets_;
    std::map<std::string, std::uint32_t> active_names_;
    std::uint32_t next_id_ = 0;
    // Barrier bookkeeping: arrival seqs completed but not yet settled, and
    // forward failures not yet reported through a command response.
    std::set<std::uint64_t> unsettled_;
    std::optional<std::uint64_t> last_completed_seq_;
    std::map<std::uint64_t, std::string> unreported_failures_;
    std::vector<ForwardRecord> forward_log_;
    std::uint64_t sessions_accepted_ = 0;
    std::uint64_t datasets_announced_ = 0;
    std::uint64_t datasets_reaped_ = 0;
    std::uint64_t commands_relayed_ = 0;
    std::size_t forwarding_now_ = 0;

    std::atomic<bool> stopping_{false};
    bool stopped_ = false;
    std::thread acceptor_;
    std::vector<std::thread> forwarders_;
    std::mutex sessions_mu_;
    struct SessionThread {
        std::thread thread;
        std::shared_ptr<std::atomic<bool>> done;
    };
    std::vector<SessionThread> session_threads_;
    std::vector<std::weak_ptr<Channel>> channels_;
};

}  // namespace staging
