#pragma once

// Mock analytical endpoint. Accepts LOAD streams (frame, then the raw
// payload) and a two-command grammar over plain STG1 byte streams, keeps a
// catalog, and records timestamped events for ordering checks.
//
//   create_tar(<name>, ...)              adds a tar
//   load_subtar(<tar>, <dataset>, ...)   binds a loaded dataset to a tar

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "staging/byte_stream.hpp"
#include "staging/log.hpp"
#include "staging/wire.hpp"

namespace staging {

struct SinkOptions {
    Endpoint listen = Endpoint::loopback("sink");
    // Payload files go here; nullopt keeps payloads in memory.
    std::optional<std::filesystem::path> store_dir;
    // Reject the first n LOADs with status internal (retry testing).
    std::uint32_t fail_first = 0;
    Millis io_timeout{30'000};
    std::ostream* log = nullptr;
};

enum class EntryKind { tar, subtar_binding, dataset };

std::string_view to_string(EntryKind kind) noexcept;

struct CatalogEntry {
    EntryKind kind = EntryKind::dataset;
    std::string name;
    std::string metadata;  // original command text, or the element type for datasets
    std::uint64_t size = 0;
    std::uint64_t checksum = 0;

    bool operator==(const CatalogEntry&) const = default;
};

struct SinkEvent {
    enum class Kind { load_begin, load_ack, command };
    Kind kind = Kind::load_begin;
    std::string subject;  // dataset name or command text
    wire::Status status = wire::Status::ok;
    std::uint64_t seq = 0;  // total order of events
    std::chrono::steady_clock::time_point at;
};

class AnalyticSink {
  public:
    static std::unique_ptr<AnalyticSink> start(SinkOptions options);

    ~AnalyticSink();
    AnalyticSink(const AnalyticSink&) = delete;
    AnalyticSink& operator=(const AnalyticSink&) = delete;

    Endpoint endpoint() const;

    // Reads exactly load.descriptor.total_size payload bytes from `in`.
    wire::LoadAck handle_load(ByteStream& in, const wire::Load& load);
    wire::CommandResponse handle_command(std::string_view text);

    // Point-in-time catalog, ordered by kind then name.
    std::vector<CatalogEntry> inspect() const;
    // Throws Error(Errc::not_found) for names that are not loaded datasets.
    std::vector<std::byte> fetch(const std::string& name) const;
    std::size_t dataset_count() const;
    void remove_dataset(const std::string& name);

    std::vector<SinkEvent> events() const;
    // Names of LOADs in arrival order (including rejected ones).
    std::vector<std::string> load_order() const;
    std::uint64_t loads_rejected() const;

    void set_fail_first(std::uint32_t n);
    void shutdown();

  private:
    explicit AnalyticSink(SinkOptions options);

    void accept_loop();
    void serve(std::shared_ptr<ByteStream> stream);
    void record(SinkEvent::Kind kind, std::string subject, wire::Status status);
    std::filesystem::path file_for(const std::string& name) const;

    SinkOptions options_;
    Log log_;
    std::unique_ptr<StreamAcceptor> acceptor_;

    mutable std::mutex mu_;
    std::map<std::string, CatalogEntry> tars_;
    std::map<std::string, CatalogEntry> bindings_;
    std::map<std::string, CatalogEntry> datasets_;
    std::map<std::string, std::vector<std::byte>> payloads_;  // memory mode
    std::vector<SinkEvent> events_;
    std::uint64_t next_event_ = 0;
    std::uint32_t fail_remaining_ = 0;
    std::uint64_t rejected_ = 0;
    std::atomic<std::uint64_t> temp_serial_{0};

    std::atomic<bool> stopping_{false};
    std::thread acceptor_thread_;
    std::mutex conn_mu_;
    struct Connection {
        std::thread thread;
        std::shared_ptr<std::atomic<bool>> done;
        std::shared_ptr<ByteStream> stream;
    };
    std::vector<Connection> connections_;
};

}  // namespace staging
