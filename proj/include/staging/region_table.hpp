#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>

#include "staging/error.hpp"

namespace staging {

struct MemoryRegion {
    std::uint64_t token = 0;
    std::uint64_t length = 0;
    std::uint32_t access_key = 0;
    bool registered = false;

    bool operator==(const MemoryRegion&) const = default;
};

struct RegionTableOptions {
    std::uint64_t key_seed = 0x5eed;
    // Per-region written-byte accounting. Real RDMA writes are invisible to
    // the passive CPU; `strict_one_sided` mode turns this off.
    bool accounting = true;
};

// Passive-side registry of remotely writable memory. Safe under concurrent
// register / deregister / write; a deregistration waits for writes already
// inside the region and rejects all later ones.
class RegionTable {
  public:
    explicit RegionTable(RegionTableOptions options = {});

    // Allocates owned backing of `length` bytes (contents unspecified).
    MemoryRegion register_region(std::size_t length);
    // Registers caller-owned backing; it must outlive the registration.
    MemoryRegion register_region(std::span<std::byte> backing);

    // Unknown token -> Errc::not_found. Deregistering twice succeeds.
    void deregister_region(std::uint64_t token);

    // Deregisters (if needed) and forgets the token entirely.
    void erase(std::uint64_t token);

    // Copies `source` into the region. Returns Errc::none, access or bounds.
    Errc write(std::uint64_t token, std::uint32_t key, std::uint64_t offset, std::span<const std::byte> source);

    // Validates like write(), then hands the destination range to `fill`,
    // which must populate it (e.g. by reading straight from a socket).
    Errc write_with(std::uint64_t token, std::uint32_t key, std::uint64_t offset, std::uint64_t length,
                    const std::function<void(std::span<std::byte>)>& fill);

    std::optional<MemoryRegion> lookup(std::uint64_t token) const;
    // Bytes written so far; nullopt when accounting is disabled or unknown token.
    std::optional<std::uint64_t> bytes_written(std::uint64_t token) const;
    // Backing bytes; remain readable after deregistration until erase().
    std::span<const std::byte> backing(std::uint64_t token) const;

    std::size_t registered_count() const;
    bool accounting() const noexcept { return options_.accounting; }

  private:
    struct Region {
        MemoryRegion info;
        std::unique_ptr<std::byte[]> owned;
        std::span<std::byte> bytes;
        std::shared_mutex gate;  // writers shared, deregistration exclusive
        std::uint64_t written = 0;
        std::mutex written_mu;
    };

    MemoryRegion insert(std::unique_ptr<Region> region);
    std::shared_ptr<Region> find(std::uint64_t token) const;

    RegionTableOptions options_;
    mutable std::shared_mutex mu_;
    std::map<std::uint64_t, std::shared_ptr<Region>> regions_;
    std::uint64_t next_token_ = 1;
    std::mt19937 keys_;
    std::size_t registered_ = 0;
};

}  // namespace staging
