// analytic-sink: mock analytical endpoint for LOAD streams and commands.

#include <CLI11.hpp>
#include <iostream>

#include "cli_support.hpp"
#include "staging/error.hpp"
#include "staging/sink.hpp"

using namespace staging;

int main(int argc, char** argv) {
    CLI::App app{"Analytical sink"};
    std::string listen = "127.0.0.1:7071";
    std::string store_dir = "memory";
    std::uint32_t fail_first = 0;

    app.add_option("--listen", listen, "host:port to accept LOAD and CMD streams on");
    app.add_option("--store-dir", store_dir, "payload directory, or 'memory'");
    app.add_option("--fail-first", fail_first, "reject the first n LOADs with status internal");
    CLI11_PARSE(app, argc, argv);

    try {
        SinkOptions opts;
        opts.listen = Endpoint::parse(listen);
        if (store_dir != "memory") opts.store_dir = store_dir;
        opts.fail_first = fail_first;
        opts.log = &std::cout;

        cli::block_termination_signals();
        auto sink = AnalyticSink::start(std::move(opts));
        std::cout << std::flush;
        cli::wait_for_termination();
        sink->shutdown();
    } catch (const Error& e) {
        std::cerr << "analytic-sink: " << e.what() << '\n';
        return e.code() == Errc::argument ? 2 : 1;
    }
    return 0;
}
