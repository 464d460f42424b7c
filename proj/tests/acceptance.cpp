// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "staging/bench.hpp"
#include "staging/client.hpp"
#include "staging/replay.hpp"
#include "test_support.hpp"

using namespace staging;
using namespace std::chrono_literals;
using staging::test::eventually;
using staging::test::oracle_fnv;
using staging::test::Pipeline;
using staging::test::random_bytes;
using staging::test::ScratchDir;
using staging::test::unique;
using wire::Status;
using wire::Tag;

namespace {

// Failed checks collect here; a criterion passes when it adds nothing.
struct Check {
    std::vector<std::string> failures;
    std::string note;

    bool operator()(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
        return ok;
    }
};

ClientOptions client_opts(std::uint64_t block, std::uint32_t workers = 1) {
    ClientOptions o;
    o.block_size = block;
    o.worker_count = workers;
    o.env_overrides = false;
    return o;
}

ServerConfig quick() {
    ServerConfig c;
    c.retry_backoff = 5ms;
    return c;
}

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return a == 0 ? 0 : 1 + (a - 1) / b; }

std::size_t count_files(const std::filesystem::path& dir) {
    std::size_t n = 0;
    for (auto& e : std::filesystem::directory_iterator(dir)) n += e.is_regular_file();
    return n;
}

class Gate final : public FaultInjector {
  public:
    void before_write(std::uint64_t, std::uint64_t, std::uint64_t) override {
        std::unique_lock lk(mu_);
        ++waiting_;
        cv_.wait(lk, [&] { return open_ || allowance_ > 0; });
        if (!open_) --allowance_;
        --waiting_;
        ++emitted_;
    }
    void allow(std::uint64_t n) {
        std::lock_guard lk(mu_);
        allowance_ += n;
        cv_.notify_all();
    }
    void open() {
        std::lock_guard lk(mu_);
        open_ = true;
        cv_.notify_all();
    }
    std::uint64_t emitted() const {
        std::lock_guard lk(mu_);
        return emitted_;
    }
    std::uint64_t waiting() const {
        std::lock_guard lk(mu_);
        return waiting_;
    }

  private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    bool open_ = false;
    std::uint64_t allowance_ = 0, emitted_ = 0, waiting_ = 0;
};

class CorruptOnce final : public FaultInjector {
  public:
    void after_write(std::uint64_t, std::uint64_t, std::span<std::byte> landed) override {
        if (landed.empty() || done_.exchange(true)) return;
        landed[0] ^= std::byte{0x01};
    }

  private:
    std::atomic<bool> done_{false};
};

// ---------------------------------------------------------------- 1

void fidelity(Check& check) {
    Pipeline p(quick());
    std::mt19937_64 rng(2024);
    const std::uint64_t blocks[] = {4096, 17 * 1024, 256 * 1024, 1 << 20};
    int verified = 0;
    for (int batch = 0; batch < 10; ++batch) {
        struct Item {
            std::string name;
            std::vector<std::byte> data;
            std::unique_ptr<ServerHandle> handle;
        };
        std::vector<Item> items;
        for (int i = 0; i < 10; ++i) {
            Item it;
            it.name = "fid-" + std::to_string(batch * 10 + i);
            it.data = random_bytes(rng() % ((8u << 20) + 1), rng());
            it.handle = ServerHandle::open(p.server->endpoint(),
                                           client_opts(blocks[rng() % 4], static_cast<std::uint32_t>(1 + rng() % 4)));
            it.handle->write({it.name}, it.data);
            items.push_back(std::move(it));
        }
        for (auto& it : items) check(it.handle->sync().all_acked(), it.name + " not acked");
        check(p.server->wait_idle(60s), "staging did not drain");
        const auto catalog = p.sink->inspect();
        for (auto& it : items) {
            const auto stored = p.sink->fetch(it.name);
            auto entry = std::find_if(catalog.begin(), catalog.end(), [&](auto& e) { return e.name == it.name; });
            const bool ok = stored == it.data && entry != catalog.end() && entry->checksum == oracle_fnv(it.data) &&
                            oracle_fnv(stored) == oracle_fnv(it.data);
            verified += check(ok, it.name + " differs at the sink");
            p.sink->remove_dataset(it.name);
        }
    }
    check.note = std::to_string(verified) + "/100 datasets byte- and checksum-identical";
}

// ---------------------------------------------------------------- 2

void message_count(Check& check) {
    Pipeline p(quick());
    std::vector<std::pair<std::uint64_t, std::uint64_t>> grid;
    for (std::uint64_t b : {4096ull, 17408ull, 65536ull, 262144ull, 1048576ull}) {
        for (std::uint64_t s : {std::uint64_t{0}, b, 3 * b, 3 * b + 1, 5 * b - 7}) grid.emplace_back(s, b);
    }
    int exact = 0;
    for (auto [s, b] : grid) {
        auto h = ServerHandle::open(p.server->endpoint(), client_opts(b));
        auto data = random_bytes(s, s ^ b);
        const auto before = p.server->frame_counts();
        h->write({unique("law")}, data);
        check(h->sync().all_acked(), "transfer failed");
        const auto d = p.server->frame_counts() - before;
        const auto n = ceil_div(s, b);
        const bool ok = d.in(Tag::block_req) == n && d.out(Tag::block_grant) == n && d.in(Tag::announce) == 1 &&
                        d.out(Tag::announce_ack) == 1 && d.in(Tag::dataset_done) == 1 && d.out(Tag::sync_ack) == 1 &&
                        d.control_frames() == 2 * n + 4;
        exact += check(ok, "S=" + std::to_string(s) + " B=" + std::to_string(b) + " req=" +
                               std::to_string(d.in(Tag::block_req)) + " expected " + std::to_string(n));
    }
    check.note = std::to_string(exact) + "/" + std::to_string(grid.size()) + " (S, B) pairs exact";
}

// ---------------------------------------------------------------- 3, 4, 5

void memory_bound(Check& check) {
    ScratchDir spill("acc-bound");
    auto cfg = quick();
    cfg.store.memory_capacity = 4 << 20;
    cfg.store.spill_directory = spill.path();
    cfg.start_paused = true;
    Pipeline p(cfg);
    auto h = ServerHandle::open(p.server->endpoint(), client_opts(1 << 20));
    std::vector<std::vector<std::byte>> data;
    for (int i = 0; i < 5; ++i) {
        data.push_back(random_bytes(2 << 20, 50 + i));
        h->write({"mb-" + std::to_string(i)}, data.back());
    }
    check(h->sync().all_acked(), "not all acked");
    int mem = 0, disk = 0;
    for (auto& s : p.server->datasets()) (s.tier == Tier::memory ? mem : disk)++;
    const auto st = p.server->stats().store;
    check(st.memory_peak <= (4u << 20), "peak memory " + std::to_string(st.memory_peak));
    check(st.budget_violations == 0, "budget exceeded in a sample");
    check(mem == 2 && disk == 3, "tiers memory=" + std::to_string(mem) + " disk=" + std::to_string(disk));
    p.server->resume_forwarding();
    check(p.server->wait_idle(30s), "did not drain");
    for (int i = 0; i < 5; ++i) check(p.sink->fetch("mb-" + std::to_string(i)) == data[i], "payload differs");
    check.note = "peak " + std::to_string(st.memory_peak) + " B, memory " + std::to_string(mem) + ", disk " +
                 std::to_string(disk);
}

struct FcfsRun {
    std::unique_ptr<ScratchDir> spill;
    std::unique_ptr<Pipeline> pipeline;
};

void fcfs(Check& check, FcfsRun& run) {
    run.spill = std::make_unique<ScratchDir>("acc-fcfs");
    auto cfg = quick();
    cfg.forward_workers = 1;
    cfg.start_paused = true;
    cfg.store.memory_capacity = 2 << 20;  // some of them land on disk
    cfg.store.spill_directory = run.spill->path();
    run.pipeline = std::make_unique<Pipeline>(cfg);
    auto& p = *run.pipeline;

    std::vector<std::string> names;
    for (int i = 0; i < 20; ++i) names.push_back("fcfs-" + std::to_string((i * 7) % 20));
    std::vector<std::vector<std::byte>> data;
    auto h = ServerHandle::open(p.server->endpoint(), client_opts(64 * 1024, 2));
    for (std::size_t i = 0; i < names.size(); ++i) {
        data.push_back(random_bytes(100'000 + i * 5'000, 70 + i));
        h->write({names[i]}, data.back());
        check(h->sync().all_acked(), names[i] + " not acked");  // completion order = list order
    }
    p.server->resume_forwarding();
    check(p.server->wait_idle(30s), "did not drain");
    const auto order = p.sink->load_order();
    check(order == names, "sink LOAD order differs from completion order");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < names.size(); ++i) ok += p.sink->fetch(names[i]) == data[i];
    check(ok == names.size(), "payloads differ");
    check.note = std::to_string(order.size()) + " LOADs in completion order";
}

void temporariness(Check& check, FcfsRun& run) {
    auto& p = *run.pipeline;
    const auto st = p.server->stats();
    check(st.store.memory_used == 0, "memory_used " + std::to_string(st.store.memory_used));
    check(st.store.disk_used == 0, "disk_used " + std::to_string(st.store.disk_used));
    check(p.server->live_files().empty(), "backing files still open");
    const auto left = count_files(run.spill->path());
    check(left == 0, std::to_string(left) + " files in spill directory");
    check(st.active_datasets == 0, "datasets still tracked");
    check.note = "memory 0 B, disk 0 B, " + std::to_string(left) + " files left";
}

// ---------------------------------------------------------------- 6

void nonblocking(Check& check) {
    Pipeline p(quick());
    auto gate = std::make_shared<Gate>();
    auto o = client_opts(1 << 20);
    o.faults = gate;
    auto h = ServerHandle::open(p.server->endpoint(), o);
    auto data = random_bytes(32 << 20, 6);

    const auto t0 = std::chrono::steady_clock::now();
    auto task = h->write({"gated"}, data);
    const auto write_us = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - t0);
    check(gate->emitted() == 0, "a WRITE_FRAME left before write() returned");

    auto pending = std::async(std::launch::async, [&] { return h->sync(); });
    check(eventually([&] { return gate->waiting() > 0; }), "worker never reached the gate");
    check(pending.wait_for(300ms) == std::future_status::timeout, "sync returned while frames were withheld");
    check(gate->emitted() == 0, "gate leaked");
    gate->open();
    auto report = pending.get();
    check(report.all_acked() && report.tasks.size() == 1, "sync after release not all-acked");
    check(task->state() == TaskState::acked, "task not acked");
    check.note = "write() returned in " + std::to_string(write_us.count()) + " us with 0 frames sent";
}

// ---------------------------------------------------------------- 7

void ordering(Check& check) {
    {
        Pipeline p(quick());
        auto h = ServerHandle::open(p.server->endpoint(), client_opts(256 * 1024));
        auto data = random_bytes(8 << 20, 7);
        h->write({"arr"}, data);
        check(h->sync().all_acked(), "write not acked");
        check(h->run_savime("create_tar(sim)").status == Status::ok, "create_tar failed");
        auto resp = h->run_savime("load_subtar(sim, arr)");
        check(resp.status == Status::ok, "load_subtar with barrier: " + resp.text);
        std::optional<SinkEvent> ack, cmd;
        for (auto& e : p.sink->events()) {
            if (e.kind == SinkEvent::Kind::load_ack && e.subject == "arr" && e.status == Status::ok) ack = e;
            if (e.kind == SinkEvent::Kind::command && e.subject.starts_with("load_subtar")) cmd = e;
        }
        check(ack && cmd && ack->seq < cmd->seq && ack->at <= cmd->at, "LOAD_ACK did not precede the CMD");
    }
    {
        auto cfg = quick();
        cfg.command_barrier = false;
        cfg.start_paused = true;  // the forward has not happened when the command arrives
        Pipeline p(cfg);
        auto h = ServerHandle::open(p.server->endpoint(), client_opts(256 * 1024));
        auto data = random_bytes(8 << 20, 7);
        h->write({"arr"}, data);
        check(h->sync().all_acked(), "write not acked");
        h->run_savime("create_tar(sim)");
        auto resp = h->run_savime("load_subtar(sim, arr)");
        check(resp.status != Status::ok && resp.text.find("unknown dataset") != std::string::npos,
              "without barrier: " + resp.text);
        check.note = "barrier: ok; disabled: \"" + resp.text + "\"";
        p.server->resume_forwarding();
        p.server->wait_idle(10s);
    }
}

// ---------------------------------------------------------------- 8

void lazy_registration(Check& check) {
    Pipeline p(quick());
    auto gate = std::make_shared<Gate>();
    auto o = client_opts(64 * 1024);
    o.faults = gate;
    o.pipeline_depth = 2;
    auto h = ServerHandle::open(p.server->endpoint(), o);
    auto data = random_bytes(16 * 64 * 1024, 8);
    gate->allow(2);
    h->write({"lazy"}, data);
    // Blocks 0 and 1 land, requests 2 and 3 follow, block 2's write is held.
    check(eventually([&] { return gate->emitted() == 2 && gate->waiting() == 1; }), "gate state");
    check(eventually([&] { return p.server->frame_counts().in(Tag::block_req) == 4; }), "4th BLOCK_REQ never seen");
    std::this_thread::sleep_for(100ms);
    const auto reqs = p.server->frame_counts().in(Tag::block_req);
    const auto regions = p.server->registered_regions();
    check(reqs == 4, "requests " + std::to_string(reqs));
    check(regions == 4, "regions " + std::to_string(regions));
    gate->open();
    check(h->sync().all_acked(), "not acked");
    check.note = std::to_string(regions) + " regions after " + std::to_string(reqs) + " BLOCK_REQs of 16 blocks";
}

// ---------------------------------------------------------------- 9

void faults(Check& check) {
    {
        auto cfg = quick();
        cfg.faults = std::make_shared<CorruptOnce>();
        Pipeline p(cfg);
        auto h = ServerHandle::open(p.server->endpoint(), client_opts(64 * 1024));
        auto data = random_bytes(1 << 20, 9);
        h->write({"bad"}, data);
        auto report = h->sync();
        check(report.tasks.size() == 1 && report.tasks[0].status == Status::checksum_mismatch,
              "corrupted block did not yield status 4");
        p.server->wait_idle(5s);
        std::this_thread::sleep_for(100ms);
        check(p.server->forward_log().empty() && p.sink->load_order().empty(), "corrupted dataset was forwarded");
    }
    auto cfg = quick();
    cfg.retry_limit = 3;
    SinkOptions so;
    so.fail_first = 2;
    Pipeline p(cfg, so);
    auto h = ServerHandle::open(p.server->endpoint(), client_opts(64 * 1024));
    auto data = random_bytes(1 << 20, 10);
    h->write({"flaky"}, data);
    check(h->sync().all_acked(), "not acked");
    check(p.server->wait_idle(10s), "did not drain");
    const auto log = p.server->forward_log();
    const bool ok = log.size() == 1 && log[0].ok && log[0].retries == 2;
    check(ok, "forward record does not show success after 2 retries");
    check(p.sink->fetch("flaky") == data, "payload differs");
    check.note = "corrupt: status 4, not forwarded; fail-first 2: forwarded after " +
                 (log.empty() ? std::string("?") : std::to_string(log[0].retries)) + " retries";
}

// ---------------------------------------------------------------- 10, 11

std::string fmt(double v) {
    std::ostringstream o;
    o.precision(4);
    o << v;
    return o.str();
}

void block_trend(Check& check) {
    bench::BenchConfig c;
    c.scenario = bench::Scenario::block_sweep;
    c.dataset_sizes = {64ull << 20};
    c.block_sizes = {4096, 65536, 1 << 20};
    c.worker_counts = {1};
    c.repetitions = 10;
    auto r = bench::run_scenario(c);
    std::vector<double> medians;
    for (auto& s : r.summary) medians.push_back(s.median_s);
    check(medians.size() == 3, "summary rows");
    for (std::size_t i = 1; i < medians.size(); ++i) {
        check(medians[i] <= medians[i - 1] * 1.10, "median rose at block " + std::to_string(c.block_sizes[i]));
    }
    check.note = "median s at 4K/64K/1M: ";
    for (std::size_t i = 0; i < medians.size(); ++i) check.note += (i ? " / " : "") + fmt(medians[i]);
}

void size_trend(Check& check) {
    bench::BenchConfig c;
    c.scenario = bench::Scenario::size_sweep;
    c.dataset_sizes = {8ull << 20, 16ull << 20, 32ull << 20, 64ull << 20, 128ull << 20};
    c.block_sizes = {1 << 20};
    c.worker_counts = {1};
    c.repetitions = 5;
    auto r = bench::run_scenario(c);
    // Fit recomputed here from the per-size means.
    std::vector<double> xs, ys;
    for (auto& s : r.summary) {
        xs.push_back(static_cast<double>(s.dataset_bytes));
        ys.push_back(s.elapsed.mean);
    }
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, my += ys[i] / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    const double r2 = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    check(xs.size() == 5, "summary rows");
    check(r2 >= 0.9, "R^2 " + fmt(r2));
    check(r.size_fit && std::abs(r.size_fit->r2 - r2) < 1e-9, "harness fit disagrees with recomputed fit");
    check.note = "R^2 = " + fmt(r2) + ", slope " + fmt(sxy / sxx * (1 << 20) * 1e3) + " ms/MiB";
}

// ---------------------------------------------------------------- 12

using wire::Flow;
using wire::Trace;
using wire::TraceEvent;

template <class T>
std::vector<std::size_t> where(const Trace& t, std::optional<Flow> flow = std::nullopt) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (std::holds_alternative<T>(t[i].msg) && (!flow || t[i].flow == *flow)) out.push_back(i);
    }
    return out;
}

void move_event(Trace& t, std::size_t from, std::size_t to) {
    auto ev = t[from];
    t.erase(t.begin() + static_cast<long>(from));
    t.insert(t.begin() + static_cast<long>(std::min(to, t.size())), ev);
}

std::vector<std::pair<std::string, Trace>> mutations(const Trace& base) {
    std::vector<std::pair<std::string, Trace>> out;
    const auto done = where<wire::DatasetDone>(base).front();
    const auto sync = where<wire::SyncAck>(base).front();
    const auto grants = where<wire::BlockGrant>(base);
    const auto reqs = where<wire::BlockReq>(base);
    const auto writes = where<wire::WriteFrame>(base);

    Trace t = base;
    move_event(t, sync, done);
    out.emplace_back("SYNC_ACK reordered before DATASET_DONE", t);

    t = base;
    move_event(t, grants.front(), 0);
    out.emplace_back("grant before announce", t);

    t = base;
    move_event(t, writes.back(), done + 1);
    out.emplace_back("write after done", t);

    t = base;
    t.insert(t.begin() + static_cast<long>(reqs.back()), base.front());
    out.emplace_back("second ANNOUNCE mid-session", t);

    t = base;
    std::get<wire::BlockGrant>(t[grants.front()].msg).region_length += 1;
    out.emplace_back("grant with the wrong region length", t);

    t = base;
    t.erase(t.begin() + static_cast<long>(writes.back()));
    out.emplace_back("DATASET_DONE before the last write", t);

    t = base;
    t.insert(t.begin() + static_cast<long>(done + 1), TraceEvent{Flow::to_server, wire::BlockReq{
                                                                  std::get<wire::BlockReq>(base[reqs.front()].msg)}});
    out.emplace_back("BLOCK_REQ after DATASET_DONE", t);

    t = base;
    std::swap(t[reqs[0]], t[reqs[1]]);
    out.emplace_back("requests out of index order", t);

    t = base;
    t[writes.front()].write_length += 1;
    out.emplace_back("write longer than its region", t);

    t = base;
    t.erase(t.begin() + static_cast<long>(grants.back()));
    out.emplace_back("write into a region never granted", t);
    return out;
}

void conformance(Check& check) {
    auto recorder = std::make_shared<wire::TraceRecorder>();
    auto cfg = quick();
    cfg.observer = recorder;
    Pipeline p(cfg);
    std::mt19937_64 rng(12);
    const std::uint64_t blocks[] = {4096, 17 * 1024, 65536};
    std::size_t launched = 0;
    while (launched < 1000) {
        auto h = ServerHandle::open(p.server->endpoint(),
                                    client_opts(blocks[rng() % 3], static_cast<std::uint32_t>(1 + rng() % 4)));
        std::vector<std::vector<std::byte>> bufs;
        for (int i = 0; i < 50; ++i) bufs.push_back(random_bytes(rng() % (200 * 1024), rng()));
        for (auto& b : bufs) h->write({unique("trace")}, b);
        check(h->sync().all_acked(), "live session failed");
        launched += bufs.size();
        p.server->wait_idle(30s);
        for (auto& e : p.sink->inspect()) {
            if (e.kind == EntryKind::dataset) p.sink->remove_dataset(e.name);
        }
    }
    const auto traces = recorder->traces();
    std::size_t accepted = 0;
    const Trace* base = nullptr;
    for (const auto& t : traces) {
        accepted += wire::replay_check(t).accepted;
        if (!base && where<wire::BlockReq>(t).size() >= 3) base = &t;
    }
    check(traces.size() == 1000, std::to_string(traces.size()) + " traces recorded");
    check(accepted == traces.size(), std::to_string(traces.size() - accepted) + " live traces rejected");
    check(base != nullptr, "no multi-block trace to mutate");
    std::size_t rejected = 0, curated = 0;
    if (base) {
        for (const auto& [what, t] : mutations(*base)) {
            ++curated;
            rejected += check(!wire::replay_check(t).accepted, "mutation accepted: " + what);
        }
    }
    check(curated == 10, "curated set size");
    check.note = std::to_string(accepted) + "/" + std::to_string(traces.size()) + " live accepted, " +
                 std::to_string(rejected) + "/" + std::to_string(curated) + " mutations rejected";
}

// ---------------------------------------------------------------- 13

struct LE {
    std::vector<std::byte> b;
    LE& n(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) b.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
        return *this;
    }
    LE& s(std::string_view text) {
        for (char c : text) b.push_back(static_cast<std::byte>(c));
        return *this;
    }
    LE& str8(std::string_view text) { return n(text.size(), 1).s(text); }
};

std::vector<std::byte> frame_of(std::uint8_t tag, const LE& body) {
    LE f;
    f.s("STG1").n(tag, 1).n(body.b.size(), 8);
    f.b.insert(f.b.end(), body.b.begin(), body.b.end());
    return f.b;
}

void codec(Check& check) {
    using namespace wire;
    const std::vector<std::pair<Message, std::vector<std::byte>>> golden{
        {Announce{{"grid", "double", 4096, 0xfeedface}, 1024},
         frame_of(0x01, LE{}.str8("grid").str8("double").n(4096, 8).n(0xfeedface, 8).n(1024, 8))},
        {AnnounceAck{Status::capacity, 17}, frame_of(0x02, LE{}.n(1, 1).n(17, 4))},
        {BlockReq{17, 2}, frame_of(0x03, LE{}.n(17, 4).n(2, 4))},
        {BlockGrant{17, 2, 0xabcdef, 0x1234, 1024}, frame_of(0x04, LE{}.n(17, 4).n(2, 4).n(0xabcdef, 8).n(0x1234, 4).n(1024, 8))},
        {DatasetDone{17}, frame_of(0x05, LE{}.n(17, 4))},
        {SyncAck{17, Status::ok}, frame_of(0x06, LE{}.n(17, 4).n(0, 1))},
        {Command{"load_subtar(a, b)"}, frame_of(0x07, LE{}.s("load_subtar(a, b)"))},
        {CommandResponse{Status::duplicate_name, "exists"}, frame_of(0x08, LE{}.n(2, 1).s("exists"))},
        {ErrorFrame{3, "protocol"}, frame_of(0x09, LE{}.n(3, 2).s("protocol"))},
        {WriteFrame{5, 6, 7, {std::byte{1}, std::byte{2}, std::byte{3}}},
         frame_of(0x10, LE{}.n(5, 8).n(6, 4).n(7, 8).n(1, 1).n(2, 1).n(3, 1))},
        {Load{{"grid", "double", 0, 0xcbf29ce484222325ull}},
         frame_of(0x20, LE{}.str8("grid").str8("double").n(0, 8).n(0xcbf29ce484222325ull, 8))},
        {LoadAck{Status::checksum_mismatch, 99}, frame_of(0x21, LE{}.n(4, 1).n(99, 8))},
    };
    std::set<Tag> tags;
    for (const auto& [msg, bytes] : golden) {
        check(encode(msg) == bytes, "golden mismatch for " + describe(msg));
        check(decode(bytes) == msg, "golden decode mismatch for " + describe(msg));
        tags.insert(tag_of(msg));
    }
    check(tags.size() == std::variant_size_v<Message>, "not every tag covered");

    std::mt19937_64 rng(13);
    auto text = [&](std::size_t max) {
        std::string s(rng() % (max + 1), '\0');
        for (auto& c : s) c = static_cast<char>(rng());
        return s;
    };
    auto st = [&] { return static_cast<Status>(rng() % 6); };
    auto u32 = [&] { return static_cast<std::uint32_t>(rng()); };
    auto desc = [&] { return DatasetDescriptor{text(255), text(63), rng(), rng()}; };
    std::size_t ok = 0;
    const std::size_t total = 10'000;
    for (std::size_t i = 0; i < total; ++i) {
        Message m;
        switch (i % 12) {
            case 0: m = Announce{desc(), rng()}; break;
            case 1: m = AnnounceAck{st(), u32()}; break;
            case 2: m = BlockReq{u32(), u32()}; break;
            case 3: m = BlockGrant{u32(), u32(), rng(), u32(), rng()}; break;
            case 4: m = DatasetDone{u32()}; break;
            case 5: m = SyncAck{u32(), st()}; break;
            case 6: m = Command{text(1000)}; break;
            case 7: m = CommandResponse{st(), text(1000)}; break;
            case 8: m = ErrorFrame{static_cast<std::uint16_t>(rng()), text(200)}; break;
            case 9: {
                std::vector<std::byte> payload(rng() % 512);
                for (auto& b : payload) b = static_cast<std::byte>(rng());
                m = WriteFrame{rng(), u32(), rng(), std::move(payload)};
                break;
            }
            case 10: m = Load{desc()}; break;
            default: m = LoadAck{st(), rng()}; break;
        }
        ok += decode(encode(m)) == m;
    }
    check(ok == total, std::to_string(total - ok) + " round trips differ");
    check.note = std::to_string(ok) + "/" + std::to_string(total) + " round trips, " + std::to_string(golden.size()) +
                 " golden frames";
}

}  // namespace

int main() {
    FcfsRun fcfs_run;
    const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
        {"end-to-end fidelity", fidelity},
        {"message-count law", message_count},
        {"memory bound and spill", memory_bound},
        {"FCFS forwarding", [&](Check& c) { fcfs(c, fcfs_run); }},
        {"temporariness", [&](Check& c) { temporariness(c, fcfs_run); }},
        {"non-blocking write", nonblocking},
        {"sync/command ordering", ordering},
        {"lazy registration", lazy_registration},
        {"fault handling", faults},
        {"block-size trend", block_trend},
        {"dataset-size trend", size_trend},
        {"protocol conformance", conformance},
        {"frame codec", codec},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check check;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[i].second(check);
        } catch (const std::exception& e) {
            check.failures.push_back(std::string("exception: ") + e.what());
        }
        const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = check.failures.empty();
        failed += !pass;
        std::cout << (pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " " << criteria[i].first << ": "
                  << (pass ? check.note : check.failures.front()) << " (" << fmt(secs) << " s)\n";
        for (std::size_t k = 1; !pass && k < check.failures.size() && k < 5; ++k) {
            std::cout << "     also: " << check.failures[k] << '\n';
        }
        std::cout.flush();
    }
    std::cout << (failed ? "FAIL" : "PASS") << " acceptance: " << criteria.size() - failed << "/" << criteria.size()
              << " criteria\n";
    return failed ? 1 : 0;
}
