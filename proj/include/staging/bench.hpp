#pragma once

// Benchmark harness: synthetic datasets, in-process client -> staging -> sink
// pipelines, parameter sweeps and CSV output with Student-t intervals.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "staging/endpoint.hpp"

namespace staging::bench {

enum class Scenario { block_sweep, worker_sweep, size_sweep, baseline_direct };

std::string_view to_string(Scenario s) noexcept;
// Throws Error(Errc::argument) for unknown names.
Scenario parse_scenario(std::string_view name);

struct BenchConfig {
    Scenario scenario = Scenario::block_sweep;
    std::vector<std::uint64_t> dataset_sizes{64ull << 20};
    std::vector<std::uint64_t> block_sizes{64 << 10, 256 << 10, 1 << 20};
    std::vector<std::uint32_t> worker_counts{1};
    std::uint32_t clients = 1;
    std::uint32_t datasets_per_client = 1;
    std::uint32_t repetitions = 10;
    std::uint64_t seed = 1;
    Scheme transport = Scheme::loopback;
    std::uint64_t memory_capacity = 1ull << 30;
    // Spill directory for the staging store; a temporary one when unset.
    std::optional<std::filesystem::path> spill_directory;
};

// The sizes of the original cluster runs: 85 files of 250 MB, 256 MB blocks.
BenchConfig cluster_scale(Scenario scenario);

struct TrialRecord {
    Scenario scenario = Scenario::block_sweep;
    std::uint64_t dataset_bytes = 0;
    std::uint64_t block_bytes = 0;
    std::uint32_t workers = 0;
    std::uint32_t clients = 0;
    std::uint32_t trial = 0;
    double elapsed_s = 0;       // write start to the last SYNC_ACK
    double elapsed_sink_s = 0;  // write start to the last LOAD_ACK
    std::uint64_t control_frames = 0;
    std::uint64_t expected_control_frames = 0;
};

struct Interval {
    double mean = 0;
    double lo = 0;
    double hi = 0;
};

struct SummaryRow {
    Scenario scenario = Scenario::block_sweep;
    std::uint64_t dataset_bytes = 0;
    std::uint64_t block_bytes = 0;
    std::uint32_t workers = 0;
    std::uint32_t clients = 0;
    std::size_t n = 0;
    Interval elapsed;
    double median_s = 0;
    Interval elapsed_sink;
};

struct LinearFit {
    double slope = 0;
    double intercept = 0;
    double r2 = 0;
};

struct ScenarioResult {
    std::vector<TrialRecord> records;
    std::vector<SummaryRow> summary;
    // Mean elapsed against dataset size; set when more than one size ran.
    std::optional<LinearFit> size_fit;
};

// Little-endian doubles from a seeded generator, prod(dims) * 8 bytes.
// Throws Error(Errc::argument) for an empty shape or a zero dimension.
std::vector<std::byte> generate(std::span<const std::uint64_t> dims, std::uint64_t seed);
// Same stream truncated to an arbitrary byte count.
std::vector<std::byte> generate_bytes(std::uint64_t size, std::uint64_t seed);

// Two-sided 95% interval, t quantile with n-1 degrees of freedom. Needs n >= 2.
Interval t_interval(std::span<const double> samples);
double median(std::vector<double> samples);
LinearFit least_squares(std::span<const double> xs, std::span<const double> ys);

// ceil(S/B) request/grant pairs plus ANNOUNCE, ANNOUNCE_ACK, DONE and SYNC_ACK.
std::uint64_t expected_control_frames(std::uint64_t size, std::uint64_t block);

// Runs every (size, block, workers) tuple `repetitions` times. Throws
// Error(Errc::argument) for bad configs and Error(Errc::protocol) naming the
// trial when a transfer fails or a per-trial invariant does not hold.
ScenarioResult run_scenario(const BenchConfig& config, std::ostream* progress = nullptr);

// Writes `path` (one row per trial), `<path>.summary.csv` and `<path>.sink.csv`.
void emit_csv(const ScenarioResult& result, const std::filesystem::path& path);

}  // namespace staging::bench
