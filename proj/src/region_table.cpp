#include "staging/region_table.hpp"

#include <cstring>
#include <mutex>
#include <new>

namespace staging {

RegionTable::RegionTable(RegionTableOptions options)
    : options_(options), keys_(static_cast<std::mt19937::result_type>(options.key_seed)) {}

MemoryRegion RegionTable::register_region(std::size_t length) {
    if (length == 0) throw Error(Errc::argument, "cannot register a zero-length region");
    auto region = std::make_unique<Region>();
    try {
        region->owned.reset(new std::byte[length]);
    } catch (const std::bad_alloc&) {
        throw Error(Errc::resource, "cannot allocate " + std::to_string(length) + " bytes of region backing");
    }
    region->bytes = {region->owned.get(), length};
    return insert(std::move(region));
}

MemoryRegion RegionTable::register_region(std::span<std::byte> backing) {
    if (backing.empty()) throw Error(Errc::argument, "cannot register a zero-length region");
    auto region = std::make_unique<Region>();
    region->bytes = backing;
    return insert(std::move(region));
}

MemoryRegion RegionTable::insert(std::unique_ptr<Region> region) {
    std::unique_lock lk(mu_);
    region->info.token = next_token_++;
    region->info.length = region->bytes.size();
    region->info.access_key = static_cast<std::uint32_t>(keys_());
    region->info.registered = true;
    auto info = region->info;
    regions_.emplace(info.token, std::shared_ptr<Region>(std::move(region)));
    ++registered_;
    return info;
}

std::shared_ptr<RegionTable::Region> RegionTable::find(std::uint64_t token) const {
    std::shared_lock lk(mu_);
    auto it = regions_.find(token);
    return it == regions_.end() ? nullptr : it->second;
}

void RegionTable::deregister_region(std::uint64_t token) {
    auto region = find(token);
    if (!region) throw Error(Errc::not_found, "unknown region token " + std::to_string(token));
    std::unique_lock gate(region->gate);
    if (!region->info.registered) return;
    region->info.registered = false;
    std::unique_lock lk(mu_);
    --registered_;
}

void RegionTable::erase(std::uint64_t token) {
    auto region = find(token);
    if (!region) return;
    deregister_region(token);
    std::unique_lock lk(mu_);
    regions_.erase(token);
}

Errc RegionTable::write(std::uint64_t token, std::uint32_t key, std::uint64_t offset,
                        std::span<const std::byte> source) {
    return write_with(token, key, offset, source.size(), [&](std::span<std::byte> dst) {
        if (!dst.empty()) std::memcpy(dst.data(), source.data(), dst.size());
    });
}

Errc RegionTable::write_with(std::uint64_t token, std::uint32_t key, std::uint64_t offset, std::uint64_t length,
                             const std::function<void(std::span<std::byte>)>& fill) {
    auto region = find(token);
    if (!region) return Errc::access;
    std::shared_lock gate(region->gate);
    if (!region->info.registered || region->info.access_key != key) return Errc::access;
    if (offset > region->info.length || length > region->info.length - offset) return Errc::bounds;
    fill(region->bytes.subspan(offset, length));
    if (options_.accounting) {
        std::lock_guard lk(region->written_mu);
        region->written += length;
    }
    return Errc::none;
}

std::optional<MemoryRegion> RegionTable::lookup(std::uint64_t token) const {
    auto region = find(token);
    if (!region) return std::nullopt;
    std::shared_lock gate(region->gate);
    return region->info;
}

std::optional<std::uint64_t> RegionTable::bytes_written(std::uint64_t token) const {
    if (!options_.accounting) return std::nullopt;
    auto region = find(token);
    if (!region) return std::nullopt;
    std::lock_guard lk(region->written_mu);
    return region->written;
}

std::span<const std::byte> RegionTable::backing(std::uint64_t token) const {
    auto region = find(token);
    if (!region) throw Error(Errc::not_found, "unknown region token " + std::to_string(token));
    return region->bytes;
}

std::size_t RegionTable::registered_count() const {
    std::shared_lock lk(mu_);
    return registered_;
}

}  // namespace staging
