#include "staging/store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>

#include "staging/error.hpp"

namespace staging {

namespace fs = std::filesystem;

std::string_view to_string(Tier tier) noexcept { return tier == Tier::memory ? "memory" : "disk"; }

namespace {

std::string errno_text() { return std::strerror(errno); }

void check_directory(const fs::path& dir, const char* what) {
    std::error_code ec;
    if (dir.empty() || !fs::is_directory(dir, ec)) {
        throw Error(Errc::io, std::string(what) + " '" + dir.string() + "' does not exist");
    }
    if (::access(dir.c_str(), W_OK | X_OK) != 0) {
        throw Error(Errc::io, std::string(what) + " '" + dir.string() + "' is not writable");
    }
}

}  // namespace

Backing::~Backing() {
    if (data_ && mapped_) ::munmap(data_, mapped_);
    if (fd_ >= 0) ::close(fd_);
    if (!path_.empty() && !keep_file_) {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    store_.release(*this);
}

Store::Store(StoreConfig config) : config_(std::move(config)) {
    check_directory(config_.spill_directory, "spill directory");
    if (config_.memory_directory) check_directory(*config_.memory_directory, "memory directory");
    std::random_device rd;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08x%08x", rd(), rd());
    nonce_ = buf;
}

Store::~Store() = default;

fs::path Store::file_for(const fs::path& dir, std::uint32_t id) const {
    return dir / ("stg-" + nonce_ + "-" + std::to_string(id) + "-" + std::to_string(++serial_) +
                  ".dat");
}

void Store::sample_locked() noexcept {
    stats_.memory_peak = std::max(stats_.memory_peak, stats_.memory_used);
    if (stats_.memory_used > config_.memory_capacity) ++stats_.budget_violations;
}

std::unique_ptr<Backing> Store::allocate(std::uint32_t dataset_id, std::uint64_t size) {
    Tier tier;
    {
        std::lock_guard lk(mu_);
        if (stats_.memory_used <= config_.memory_capacity && size <= config_.memory_capacity - stats_.memory_used) {
            tier = Tier::memory;
            stats_.memory_used += size;
            ++stats_.memory_allocations;
        } else if (!config_.disk_capacity || stats_.disk_used + size <= *config_.disk_capacity) {
            tier = Tier::disk;
            stats_.disk_used += size;
            ++stats_.disk_allocations;
        } else {
            throw Error(Errc::capacity, "no room for " + std::to_string(size) + " bytes in memory or on disk");
        }
        sample_locked();
    }

    // From here on the destructor gives the reservation back.
    std::unique_ptr<Backing> b(new Backing(*this, tier, size));
    if (size == 0) return b;

    const bool file_backed = tier == Tier::disk || config_.memory_directory.has_value();
    if (!file_backed) {
        void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0);
        if (p == MAP_FAILED) throw Error(Errc::resource, "anonymous mapping failed: " + errno_text());
        b->data_ = static_cast<std::byte*>(p);
        b->mapped_ = size;
        return b;
    }

    b->path_ = file_for(tier == Tier::disk ? config_.spill_directory : *config_.memory_directory, dataset_id);
    b->fd_ = ::open(b->path_.c_str(), O_RDWR | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
    if (b->fd_ < 0) throw Error(Errc::io, "cannot create " + b->path_.string() + ": " + errno_text());
    if (::ftruncate(b->fd_, static_cast<off_t>(size)) != 0) {
        throw Error(Errc::io, "cannot size " + b->path_.string() + ": " + errno_text());
    }
    void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, b->fd_, 0);
    if (p == MAP_FAILED) throw Error(Errc::resource, "mapping " + b->path_.string() + " failed: " + errno_text());
    b->data_ = static_cast<std::byte*>(p);
    b->mapped_ = size;
    return b;
}

void Store::release(const Backing& b) noexcept {
    std::lock_guard lk(mu_);
    if (b.tier_ == Tier::memory) {
        stats_.memory_used -= std::min(stats_.memory_used, b.size_);
    } else {
        stats_.disk_used -= std::min(stats_.disk_used, b.size_);
    }
    sample_locked();
}

fs::path Store::retain(std::unique_ptr<Backing> backing, std::uint32_t dataset_id, const std::string& sidecar_json) {
    fs::path payload;
    if (backing->tier() == Tier::disk && !backing->path().empty()) {
        if (backing->data_) ::msync(backing->data_, backing->mapped_, MS_SYNC);
        backing->keep_file_ = true;
        payload = backing->path();
    } else {
        payload = file_for(config_.spill_directory, dataset_id);
        std::ofstream out(payload, std::ios::binary);
        out.write(reinterpret_cast<const char*>(backing->data_), static_cast<std::streamsize>(backing->size()));
        if (!out) throw Error(Errc::io, "cannot retain payload in " + payload.string());
    }
    backing.reset();

    auto sidecar = payload;
    sidecar.replace_extension(".failed.json");
    std::ofstream meta(sidecar);
    meta << sidecar_json << '\n';
    if (!meta) throw Error(Errc::io, "cannot write " + sidecar.string());
    return sidecar;
}

std::vector<fs::path> Store::retained() const {
    std::vector<fs::path> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(config_.spill_directory, ec)) {
        const auto name = entry.path().filename().string();
        if (name.ends_with(".failed.json")) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::unique_ptr<Backing> Store::adopt(const fs::path& payload_file) {
    std::error_code ec;
    const auto size = fs::file_size(payload_file, ec);
    if (ec) throw Error(Errc::not_found, "retained payload " + payload_file.string() + " is missing");
    {
        std::lock_guard lk(mu_);
        stats_.disk_used += size;
        ++stats_.disk_allocations;
    }
    std::unique_ptr<Backing> b(new Backing(*this, Tier::disk, size));
    b->path_ = payload_file;
    b->fd_ = ::open(payload_file.c_str(), O_RDWR | O_CLOEXEC);
    if (b->fd_ < 0) throw Error(Errc::io, "cannot open " + payload_file.string() + ": " + errno_text());
    if (size > 0) {
        void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, b->fd_, 0);
        if (p == MAP_FAILED) throw Error(Errc::resource, "mapping " + payload_file.string() + " failed");
        b->data_ = static_cast<std::byte*>(p);
        b->mapped_ = size;
    }
    return b;
}

StoreStats Store::stats() const {
    std::lock_guard lk(mu_);
    return stats_;
}

std::vector<fs::path> Store::live_files() const {
    std::vector<fs::path> out;
    auto scan = [&](const fs::path& dir) {
        std::error_code ec;
        for (const auto& entry : fs::directory_iterator(dir, ec)) {
            const auto name = entry.path().filename().string();
            if (name.starts_with("stg-" + nonce_ + "-") && name.ends_with(".dat")) {
                auto sidecar = entry.path();
                sidecar.replace_extension(".failed.json");
                if (!fs::exists(sidecar)) out.push_back(entry.path());
            }
        }
    };
    scan(config_.spill_directory);
    if (config_.memory_directory) scan(*config_.memory_directory);
    return out;
}

}  // namespace staging
