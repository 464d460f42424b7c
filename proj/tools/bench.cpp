// bench: sweeps block size, worker count and dataset size over an
// in-process client -> staging -> sink pipeline and writes CSV.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "cli_support.hpp"
#include "staging/bench.hpp"
#include "staging/error.hpp"

using namespace staging;

int main(int argc, char** argv) {
    CLI::App app{"Staging benchmark harness"};
    app.require_subcommand(1);
    auto* run = app.add_subcommand("run", "run one scenario");

    std::string scenario = "block_sweep";
    std::string sizes, blocks, workers;
    std::uint32_t clients = 0, reps = 0, per_client = 0;
    std::uint64_t seed = 1;
    std::string transport = "loopback";
    std::string out = "bench.csv";
    std::string spill;
    bool cluster = false;
    bool quiet = false;

    run->add_option("--scenario", scenario, "block_sweep | worker_sweep | size_sweep | baseline_direct");
    run->add_option("--sizes", sizes, "dataset sizes, e.g. 8M,16M");
    run->add_option("--blocks", blocks, "block sizes, e.g. 4K,64K,1M");
    run->add_option("--workers", workers, "client worker counts, e.g. 1,4");
    run->add_option("--clients", clients, "concurrent client handles");
    run->add_option("--datasets-per-client", per_client, "datasets each client writes per trial");
    run->add_option("--reps", reps, "repetitions per parameter tuple (>= 2)");
    run->add_option("--seed", seed, "payload seed");
    run->add_option("--transport", transport, "loopback | stream")->check(CLI::IsMember({"loopback", "stream"}));
    run->add_option("--out", out, "trial CSV path; summary goes to <out>.summary.csv");
    run->add_option("--spill-dir", spill, "staging spill directory (temporary by default)");
    run->add_flag("--paper-scale", cluster, "85 datasets of 250 MB with 256 MiB blocks");
    run->add_flag("--quiet", quiet, "no per-trial progress lines");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto sc = bench::parse_scenario(scenario);
        bench::BenchConfig cfg = cluster ? bench::cluster_scale(sc) : bench::BenchConfig{};
        cfg.scenario = sc;
        if (!cluster) {
            switch (sc) {
                case bench::Scenario::block_sweep: break;
                case bench::Scenario::worker_sweep:
                    cfg.block_sizes = {1 << 20};
                    cfg.worker_counts = {1, 4};
                    cfg.clients = 4;
                    break;
                case bench::Scenario::size_sweep:
                    cfg.dataset_sizes = {8 << 20, 16 << 20, 32 << 20, 64 << 20, 128 << 20};
                    cfg.block_sizes = {1 << 20};
                    break;
                case bench::Scenario::baseline_direct: cfg.block_sizes = {1 << 20}; break;
            }
        }
        if (!sizes.empty()) cfg.dataset_sizes = cli::parse_byte_list(sizes);
        if (!blocks.empty()) cfg.block_sizes = cli::parse_byte_list(blocks);
        if (!workers.empty()) cfg.worker_counts = cli::parse_count_list(workers);
        if (clients) cfg.clients = clients;
        if (per_client) cfg.datasets_per_client = per_client;
        if (reps) cfg.repetitions = reps;
        cfg.seed = seed;
        cfg.transport = transport == "stream" ? Scheme::stream : Scheme::loopback;
        if (!spill.empty()) cfg.spill_directory = spill;

        auto result = bench::run_scenario(cfg, quiet ? nullptr : &std::cerr);
        bench::emit_csv(result, out);
        for (const auto& row : result.summary) {
            std::printf("%s size=%llu block=%llu workers=%u clients=%u mean_s=%.6f ci95=[%.6f, %.6f] median_s=%.6f\n",
                        std::string(bench::to_string(row.scenario)).c_str(),
                        static_cast<unsigned long long>(row.dataset_bytes),
                        static_cast<unsigned long long>(row.block_bytes), row.workers, row.clients, row.elapsed.mean,
                        row.elapsed.lo, row.elapsed.hi, row.median_s);
        }
        if (result.size_fit) {
            std::printf("fit elapsed_s = %.6g + %.6g * bytes, r2=%.4f\n", result.size_fit->intercept,
                        result.size_fit->slope, result.size_fit->r2);
        }
    } catch (const Error& e) {
        std::cerr << "bench: " << e.what() << '\n';
        return e.code() == Errc::argument ? 2 : 1;
    }
    return 0;
}
