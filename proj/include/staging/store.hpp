#pragma once

// Dataset backing store: a byte budget for the memory tier and a spill
// directory as the fallback tier. Reservation is atomic at allocation, so
// concurrent announcements never over-commit the memory tier.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace staging {

enum class Tier { memory, disk };

std::string_view to_string(Tier tier) noexcept;

struct StoreConfig {
    std::uint64_t memory_capacity = 1ull << 30;
    std::filesystem::path spill_directory;
    // When set, memory-tier datasets are files in this directory (a tmpfs
    // mount in a real deployment) instead of anonymous mappings.
    std::optional<std::filesystem::path> memory_directory;
    // Unbounded when unset.
    std::optional<std::uint64_t> disk_capacity;
};

struct StoreStats {
    std::uint64_t memory_used = 0;
    std::uint64_t memory_peak = 0;
    std::uint64_t disk_used = 0;
    std::uint64_t memory_allocations = 0;
    std::uint64_t disk_allocations = 0;
    // Samples (taken on every allocate and release) that saw memory_used above capacity.
    std::uint64_t budget_violations = 0;
};

class Store;

// One dataset's bytes. Destruction releases the budget and deletes the file.
class Backing {
  public:
    ~Backing();
    Backing(const Backing&) = delete;
    Backing& operator=(const Backing&) = delete;

    std::span<std::byte> bytes() noexcept { return {data_, size_}; }
    std::span<const std::byte> bytes() const noexcept { return {data_, size_}; }
    std::uint64_t size() const noexcept { return size_; }
    Tier tier() const noexcept { return tier_; }
    // Empty for anonymous memory.
    const std::filesystem::path& path() const noexcept { return path_; }

  private:
    friend class Store;
    Backing(Store& store, Tier tier, std::uint64_t size) : store_(store), tier_(tier), size_(size) {}

    Store& store_;
    Tier tier_;
    std::uint64_t size_;
    std::byte* data_ = nullptr;
    std::size_t mapped_ = 0;
    int fd_ = -1;
    std::filesystem::path path_;
    bool keep_file_ = false;
};

class Store {
  public:
    // Throws Error(Errc::io) if a directory is missing or not writable.
    explicit Store(StoreConfig config);
    ~Store();

    const StoreConfig& config() const noexcept { return config_; }

    // Memory tier iff size fits the remaining budget; disk otherwise.
    // Throws Error(Errc::capacity) when the disk tier is full too.
    std::unique_ptr<Backing> allocate(std::uint32_t dataset_id, std::uint64_t size);

    // Moves the payload to a spill file that outlives the process, writes
    // `sidecar_json` next to it and returns the sidecar path.
    std::filesystem::path retain(std::unique_ptr<Backing> backing, std::uint32_t dataset_id,
                                 const std::string& sidecar_json);

    // Sidecars of retained payloads in the spill directory.
    std::vector<std::filesystem::path> retained() const;
    // Reopens a retained payload on the disk tier; the file is deleted with the backing.
    std::unique_ptr<Backing> adopt(const std::filesystem::path& payload_file);

    StoreStats stats() const;
    // Live backing files owned by this store instance.
    std::vector<std::filesystem::path> live_files() const;

  private:
    friend class Backing;
    void release(const Backing& b) noexcept;
    void sample_locked() noexcept;
    std::filesystem::path file_for(const std::filesystem::path& dir, std::uint32_t id) const;

    StoreConfig config_;
    std::string nonce_;
    mutable std::mutex mu_;
    StoreStats stats_;
    mutable std::atomic<std::uint64_t> serial_{0};
};

}  // namespace staging
