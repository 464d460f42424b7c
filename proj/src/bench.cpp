#include "staging/bench.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "staging/byte_stream.hpp"
#include "staging/client.hpp"
#include "staging/error.hpp"
#include "staging/fnv1a.hpp"
#include "staging/server.hpp"
#include "staging/sink.hpp"
#include "staging/wire.hpp"

namespace staging::bench {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string_view to_string(Scenario s) noexcept {
    switch (s) {
        case Scenario::block_sweep: return "block_sweep";
        case Scenario::worker_sweep: return "worker_sweep";
        case Scenario::size_sweep: return "size_sweep";
        case Scenario::baseline_direct: return "baseline_direct";
    }
    return "unknown";
}

Scenario parse_scenario(std::string_view name) {
    for (auto s : {Scenario::block_sweep, Scenario::worker_sweep, Scenario::size_sweep, Scenario::baseline_direct}) {
        if (to_string(s) == name) return s;
    }
    throw Error(Errc::argument, "unknown scenario '" + std::string(name) + "'");
}

BenchConfig cluster_scale(Scenario scenario) {
    BenchConfig c;
    c.scenario = scenario;
    c.dataset_sizes = {250'000'000};
    c.block_sizes = {256ull << 20};
    c.worker_counts = {1};
    c.clients = 1;
    c.datasets_per_client = 85;
    c.memory_capacity = 32ull << 30;
    switch (scenario) {
        case Scenario::block_sweep: c.block_sizes = {1 << 20, 16 << 20, 64 << 20, 256ull << 20}; break;
        case Scenario::worker_sweep: c.worker_counts = {1, 2, 4}; break;
        case Scenario::size_sweep:
            c.dataset_sizes = {50'000'000, 100'000'000, 150'000'000, 200'000'000, 250'000'000};
            break;
        case Scenario::baseline_direct: break;
    }
    return c;
}

namespace {

void fill(std::span<std::byte> out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::size_t off = 0;
    while (off < out.size()) {
        // Uniform double in [0, 1) from the top 53 bits.
        double v = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        const auto n = std::min<std::size_t>(8, out.size() - off);
        std::memcpy(out.data() + off, &bits, n);
        off += n;
    }
}

}  // namespace

std::vector<std::byte> generate(std::span<const std::uint64_t> dims, std::uint64_t seed) {
    if (dims.empty()) throw Error(Errc::argument, "shape needs at least one dimension");
    std::uint64_t elems = 1;
    for (auto d : dims) {
        if (d == 0) throw Error(Errc::argument, "zero dimension in shape");
        if (elems > (std::uint64_t{1} << 60) / d) throw Error(Errc::argument, "shape too large");
        elems *= d;
    }
    return generate_bytes(elems * 8, seed);
}

std::vector<std::byte> generate_bytes(std::uint64_t size, std::uint64_t seed) {
    std::vector<std::byte> out(size);
    fill(out, seed);
    return out;
}

Interval t_interval(std::span<const double> samples) {
    const auto n = samples.size();
    if (n < 2) throw Error(Errc::argument, "confidence interval needs at least 2 samples");
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
    double ss = 0;
    for (double x : samples) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    boost::math::students_t dist(static_cast<double>(n - 1));
    const double half = boost::math::quantile(boost::math::complement(dist, 0.025)) * sd / std::sqrt(double(n));
    return {mean, mean - half, mean + half};
}

double median(std::vector<double> samples) {
    if (samples.empty()) throw Error(Errc::argument, "median of nothing");
    std::sort(samples.begin(), samples.end());
    const auto n = samples.size();
    return n % 2 ? samples[n / 2] : (samples[n / 2 - 1] + samples[n / 2]) / 2;
}

LinearFit least_squares(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw Error(Errc::argument, "fit needs two or more points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0) throw Error(Errc::argument, "fit needs distinct x values");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (f.intercept + f.slope * xs[i]);
        ss_res += r * r;
    }
    f.r2 = syy == 0 ? 1.0 : 1.0 - ss_res / syy;
    return f;
}

std::uint64_t expected_control_frames(std::uint64_t size, std::uint64_t block) {
    return 2 * wire::block_count(size, block) + 4;
}

namespace {

void validate(const BenchConfig& c) {
    auto arg = [](const std::string& m) { throw Error(Errc::argument, m); };
    if (c.repetitions < 2) arg("repetitions must be at least 2 for a confidence interval");
    if (c.dataset_sizes.empty() || c.block_sizes.empty() || c.worker_counts.empty()) arg("empty sweep list");
    if (c.clients < 1 || c.datasets_per_client < 1) arg("clients and datasets_per_client must be positive");
    for (auto b : c.block_sizes) {
        if (b < kMinBlockSize || b > kMaxBlockSize) arg("block size " + std::to_string(b) + " out of range");
    }
    for (auto w : c.worker_counts) {
        if (w < 1) arg("worker count must be positive");
    }
}

std::string unique_tag() {
    static std::atomic<std::uint64_t> n{0};
    return std::to_string(::getpid()) + "-" + std::to_string(++n);
}

Endpoint listen_at(Scheme scheme, const std::string& name) {
    return scheme == Scheme::loopback ? Endpoint::loopback(name) : Endpoint::stream("127.0.0.1", 0);
}

struct Pipeline {
    fs::path temp_dir;
    std::unique_ptr<AnalyticSink> sink;
    std::unique_ptr<StagingServer> server;

    ~Pipeline() {
        server.reset();
        sink.reset();
        if (!temp_dir.empty()) {
            std::error_code ec;
            fs::remove_all(temp_dir, ec);
        }
    }
};

std::unique_ptr<Pipeline> build_pipeline(const BenchConfig& c, bool with_staging) {
    auto p = std::make_unique<Pipeline>();
    const auto tag = unique_tag();
    SinkOptions so;
    so.listen = listen_at(c.transport, "bench-sink-" + tag);
    p->sink = AnalyticSink::start(so);
    if (!with_staging) return p;

    ServerConfig sc;
    sc.listen = listen_at(c.transport, "bench-staging-" + tag);
    sc.forward_target = p->sink->endpoint();
    sc.store.memory_capacity = c.memory_capacity;
    if (c.spill_directory) {
        sc.store.spill_directory = *c.spill_directory;
    } else {
        p->temp_dir = fs::temp_directory_path() / ("stg-bench-" + tag);
        fs::create_directories(p->temp_dir);
        sc.store.spill_directory = p->temp_dir;
    }
    p->server = StagingServer::start(std::move(sc));
    return p;
}

struct Tuple {
    std::uint64_t size;
    std::uint64_t block;
    std::uint32_t workers;
};

[[noreturn]] void trial_failed(const Tuple& t, std::uint32_t trial, const std::string& why) {
    throw Error(Errc::protocol, "trial " + std::to_string(trial) + " (size=" + std::to_string(t.size) +
                                    " block=" + std::to_string(t.block) + " workers=" + std::to_string(t.workers) +
                                    "): " + why);
}

// Waits for an ok LOAD_ACK for each name; returns the latest ack time.
Clock::time_point await_sink(AnalyticSink& sink, const std::set<std::string>& names, std::size_t from_event,
                             Millis timeout, std::size_t& next_event, bool& ok) {
    const auto deadline = Clock::now() + timeout;
    std::set<std::string> pending = names;
    Clock::time_point last{};
    next_event = from_event;
    while (!pending.empty()) {
        const auto events = sink.events();
        for (; next_event < events.size(); ++next_event) {
            const auto& e = events[next_event];
            if (e.kind != SinkEvent::Kind::load_ack || e.status != wire::Status::ok) continue;
            if (pending.erase(e.subject)) last = std::max(last, e.at);
        }
        if (pending.empty()) break;
        if (Clock::now() > deadline) {
            ok = false;
            return last;
        }
        std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
    ok = true;
    return last;
}

void direct_load(const Endpoint& sink, const std::string& name, std::span<const std::byte> payload) {
    auto stream = dial_stream(sink);
    wire::DatasetDescriptor d{name, "double", payload.size(), fnv1a(payload)};
    wire::write_message(*stream, wire::Load{d});
    std::size_t off = 0;
    while (off < payload.size()) {
        const auto n = std::min<std::size_t>(payload.size() - off, 1 << 20);
        stream->write_all(payload.subspan(off, n));
        off += n;
    }
    auto reply = wire::read_message(*stream, Millis{60'000});
    const auto* ack = std::get_if<wire::LoadAck>(&reply);
    if (!ack || ack->status != wire::Status::ok) throw Error(Errc::protocol, "LOAD of " + name + " rejected");
}

}  // namespace

ScenarioResult run_scenario(const BenchConfig& c, std::ostream* progress) {
    validate(c);
    const bool direct = c.scenario == Scenario::baseline_direct;
    auto pipe = build_pipeline(c, !direct);
    const std::uint32_t n_datasets = c.clients * c.datasets_per_client;

    std::vector<Tuple> tuples;
    for (auto s : c.dataset_sizes)
        for (auto b : (direct ? std::vector<std::uint64_t>{c.block_sizes.front()} : c.block_sizes))
            for (auto w : c.worker_counts) tuples.push_back({s, b, w});

    ScenarioResult result;
    std::map<std::uint64_t, std::vector<std::vector<std::byte>>> payloads;
    std::size_t sink_cursor = 0;
    std::uint64_t serial = 0;

    for (const auto& t : tuples) {
        auto& bufs = payloads[t.size];
        if (bufs.empty()) {
            for (std::uint32_t i = 0; i < n_datasets; ++i) bufs.push_back(generate_bytes(t.size, c.seed + i));
        }
        std::vector<double> elapsed, elapsed_sink;
        for (std::uint32_t trial = 0; trial < c.repetitions; ++trial) {
            std::vector<std::vector<std::string>> names(c.clients);
            std::set<std::string> all_names;
            for (std::uint32_t k = 0; k < c.clients; ++k) {
                for (std::uint32_t j = 0; j < c.datasets_per_client; ++j) {
                    names[k].push_back("bench-" + std::to_string(serial) + "-c" + std::to_string(k) + "-d" +
                                       std::to_string(j));
                    all_names.insert(names[k].back());
                }
            }
            ++serial;

            std::vector<std::unique_ptr<ServerHandle>> handles;
            if (!direct) {
                ClientOptions co;
                co.worker_count = t.workers;
                co.block_size = t.block;
                co.env_overrides = false;
                for (std::uint32_t k = 0; k < c.clients; ++k) {
                    handles.push_back(ServerHandle::open(pipe->server->endpoint(), co));
                }
            }
            const auto sink_before = pipe->sink->dataset_count();
            const auto frames_before = direct ? FrameCounts{} : pipe->server->frame_counts();

            std::vector<std::string> failures(c.clients);
            std::vector<Clock::time_point> synced(c.clients);
            const auto t0 = Clock::now();
            std::vector<std::thread> threads;
            for (std::uint32_t k = 0; k < c.clients; ++k) {
                threads.emplace_back([&, k] {
                    try {
                        for (std::uint32_t j = 0; j < c.datasets_per_client; ++j) {
                            const auto& buf = bufs[k * c.datasets_per_client + j];
                            if (direct) {
                                direct_load(pipe->sink->endpoint(), names[k][j], buf);
                            } else {
                                handles[k]->write({names[k][j], "double"}, buf);
                            }
                        }
                        if (!direct) {
                            auto report = handles[k]->sync();
                            if (!report.all_acked()) {
                                for (const auto& o : report.tasks) {
                                    if (o.state != TaskState::acked) failures[k] = o.name + ": " + o.reason;
                                }
                            }
                        }
                    } catch (const std::exception& e) {
                        failures[k] = e.what();
                    }
                    synced[k] = Clock::now();
                });
            }
            for (auto& th : threads) th.join();
            for (const auto& f : failures) {
                if (!f.empty()) trial_failed(t, trial, f);
            }
            const auto t_sync = *std::max_element(synced.begin(), synced.end());

            bool sink_ok = false;
            const auto t_sink = await_sink(*pipe->sink, all_names, sink_cursor, Millis{120'000}, sink_cursor, sink_ok);
            if (!sink_ok) trial_failed(t, trial, "datasets did not reach the sink");
            handles.clear();

            TrialRecord r;
            r.scenario = c.scenario;
            r.dataset_bytes = t.size;
            r.block_bytes = t.block;
            r.workers = t.workers;
            r.clients = c.clients;
            r.trial = trial;
            r.elapsed_s = std::chrono::duration<double>(t_sync - t0).count();
            r.elapsed_sink_s = std::chrono::duration<double>(std::max(t_sink, t_sync) - t0).count();
            if (direct) r.elapsed_s = r.elapsed_sink_s;

            // Drain check: staging empty, sink grew by exactly this trial's datasets.
            if (!direct) {
                if (!pipe->server->wait_idle(Millis{30'000})) trial_failed(t, trial, "staging did not drain");
                const auto st = pipe->server->stats().store;
                if (st.memory_used != 0 || st.disk_used != 0) trial_failed(t, trial, "store not empty after drain");
                r.control_frames = (pipe->server->frame_counts() - frames_before).control_frames();
                r.expected_control_frames = n_datasets * expected_control_frames(t.size, t.block);
                if (r.control_frames != r.expected_control_frames) {
                    trial_failed(t, trial,
                                 "control frames " + std::to_string(r.control_frames) + " != expected " +
                                     std::to_string(r.expected_control_frames));
                }
            }
            if (pipe->sink->dataset_count() != sink_before + n_datasets) {
                trial_failed(t, trial, "sink inventory did not grow by " + std::to_string(n_datasets));
            }
            for (const auto& n : all_names) pipe->sink->remove_dataset(n);

            elapsed.push_back(r.elapsed_s);
            elapsed_sink.push_back(r.elapsed_sink_s);
            result.records.push_back(r);
            if (progress) {
                *progress << to_string(c.scenario) << " size=" << t.size << " block=" << t.block
                          << " workers=" << t.workers << " trial=" << trial << " elapsed_s=" << r.elapsed_s
                          << " sink_s=" << r.elapsed_sink_s << '\n';
            }
        }
        SummaryRow row;
        row.scenario = c.scenario;
        row.dataset_bytes = t.size;
        row.block_bytes = t.block;
        row.workers = t.workers;
        row.clients = c.clients;
        row.n = elapsed.size();
        row.elapsed = t_interval(elapsed);
        row.median_s = median(elapsed);
        row.elapsed_sink = t_interval(elapsed_sink);
        result.summary.push_back(row);
        if (c.scenario == Scenario::size_sweep) payloads.erase(t.size);
    }

    std::set<std::uint64_t> sizes(c.dataset_sizes.begin(), c.dataset_sizes.end());
    if (sizes.size() > 1) {
        std::vector<double> xs, ys;
        for (const auto& row : result.summary) {
            xs.push_back(static_cast<double>(row.dataset_bytes));
            ys.push_back(row.elapsed.mean);
        }
        result.size_fit = least_squares(xs, ys);
    }
    return result;
}

void emit_csv(const ScenarioResult& result, const fs::path& path) {
    if (result.records.empty()) throw Error(Errc::argument, "no trial records to write");
    auto open = [](const fs::path& p) {
        std::ofstream out(p, std::ios::trunc);
        if (!out) throw Error(Errc::io, "cannot write " + p.string());
        out.precision(9);
        return out;
    };
    auto finish = [](std::ofstream& out, const fs::path& p) {
        out.flush();
        if (!out) throw Error(Errc::io, "write to " + p.string() + " failed");
    };

    auto trials = open(path);
    trials << "scenario,dataset_bytes,block_bytes,workers,clients,trial,elapsed_s,control_frames\n";
    for (const auto& r : result.records) {
        trials << to_string(r.scenario) << ',' << r.dataset_bytes << ',' << r.block_bytes << ',' << r.workers << ','
               << r.clients << ',' << r.trial << ',' << r.elapsed_s << ',' << r.control_frames << '\n';
    }
    finish(trials, path);

    const fs::path summary_path = path.string() + ".summary.csv";
    auto summary = open(summary_path);
    summary << "scenario,dataset_bytes,block_bytes,workers,clients,mean_s,ci95_lo,ci95_hi\n";
    for (const auto& s : result.summary) {
        summary << to_string(s.scenario) << ',' << s.dataset_bytes << ',' << s.block_bytes << ',' << s.workers << ','
                << s.clients << ',' << s.elapsed.mean << ',' << s.elapsed.lo << ',' << s.elapsed.hi << '\n';
    }
    finish(summary, summary_path);

    // The staging -> sink leg, measured to the last LOAD_ACK.
    const fs::path sink_path = path.string() + ".sink.csv";
    auto sink = open(sink_path);
    sink << "scenario,dataset_bytes,block_bytes,workers,clients,trial,elapsed_sink_s\n";
    for (const auto& r : result.records) {
        sink << to_string(r.scenario) << ',' << r.dataset_bytes << ',' << r.block_bytes << ',' << r.workers << ','
             << r.clients << ',' << r.trial << ',' << r.elapsed_sink_s << '\n';
    }
    finish(sink, sink_path);
}

}  // namespace staging::bench
