// staging-server: accepts client sessions, buffers datasets and forwards
// them to the analytical sink.

#include <CLI11.hpp>
#include <iostream>

#include "cli_support.hpp"
#include "staging/error.hpp"
#include "staging/server.hpp"

using namespace staging;

int main(int argc, char** argv) {
    CLI::App app{"Staging server"};
    std::string listen = "127.0.0.1:7070";
    std::string memory_capacity = "1G";
    std::string spill_dir;
    std::string memory_dir;
    std::string forward;
    std::uint32_t forward_workers = 2;
    std::uint32_t retry_limit = 3;
    std::uint64_t idle_ms = kDefaultIdleTimeout.count();
    bool strict = false;
    bool requeue = false;

    app.add_option("--listen", listen, "host:port to accept clients on")->envname("STAGING_LISTEN");
    app.add_option("--memory-capacity", memory_capacity, "memory tier budget (e.g. 512M)")
        ->envname("STAGING_MEMORY_CAPACITY");
    app.add_option("--spill-dir", spill_dir, "directory for disk-tier datasets")
        ->envname("STAGING_SPILL_DIR")
        ->required();
    app.add_option("--memory-dir", memory_dir, "back memory-tier datasets with files here (tmpfs)")
        ->envname("STAGING_MEMORY_DIR");
    app.add_option("--forward", forward, "host:port of the analytical sink")->envname("STAGING_FORWARD");
    app.add_option("--forward-workers", forward_workers, "forward worker threads")
        ->envname("STAGING_FORWARD_WORKERS")
        ->check(CLI::PositiveNumber);
    app.add_option("--retry-limit", retry_limit, "forward retries after the first attempt")
        ->envname("STAGING_RETRY_LIMIT");
    app.add_option("--idle-timeout-ms", idle_ms, "reap sessions silent for this long")
        ->envname("STAGING_IDLE_TIMEOUT_MS");
    app.add_flag("--strict-one-sided", strict, "no passive-side write accounting")->envname("STAGING_STRICT_ONE_SIDED");
    app.add_flag("--requeue-failed", requeue, "re-enqueue payloads kept by failed forwards")
        ->envname("STAGING_REQUEUE_FAILED");
    CLI11_PARSE(app, argc, argv);

    try {
        ServerConfig cfg;
        cfg.listen = Endpoint::parse(listen);
        cfg.store.memory_capacity = cli::parse_bytes(memory_capacity);
        cfg.store.spill_directory = spill_dir;
        if (!memory_dir.empty()) cfg.store.memory_directory = memory_dir;
        if (!forward.empty()) cfg.forward_target = Endpoint::parse(forward);
        cfg.forward_workers = forward_workers;
        cfg.retry_limit = retry_limit;
        cfg.idle_timeout = Millis(idle_ms);
        cfg.strict_one_sided = strict;
        cfg.requeue_failed = requeue;
        cfg.log = &std::cout;

        cli::block_termination_signals();
        auto server = StagingServer::start(std::move(cfg));
        std::cout << std::flush;
        cli::wait_for_termination();
        server->shutdown();
    } catch (const Error& e) {
        std::cerr << "staging-server: " << e.what() << '\n';
        return e.code() == Errc::argument ? 2 : 1;
    }
    return 0;
}
