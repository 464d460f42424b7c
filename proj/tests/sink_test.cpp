#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <thread>

#include "staging/error.hpp"
#include "staging/sink.hpp"
#include "test_support.hpp"

using namespace staging;
using namespace staging::wire;
using namespace std::chrono_literals;

namespace {

std::unique_ptr<AnalyticSink> memory_sink(SinkOptions o = {}) {
    o.listen = Endpoint::loopback(test::unique("sink"));
    return AnalyticSink::start(std::move(o));
}

// Feeds a LOAD through an in-process pipe.
LoadAck load(AnalyticSink& sink, const std::string& name, std::span<const std::byte> payload,
             std::optional<std::uint64_t> declared = std::nullopt) {
    auto [w, r] = make_pipe(1 << 16);
    std::thread writer([&, w = std::move(w)] {
        w->write_all(payload);
        w->shutdown();
    });
    auto ack = sink.handle_load(*r, Load{{name, "double", payload.size(), declared.value_or(test::oracle_fnv(payload))}});
    writer.join();
    return ack;
}

}  // namespace

TEST(Sink, LoadWithMatchingChecksum) {
    auto sink = memory_sink();
    const auto data = test::random_bytes(1024, 1);
    auto ack = load(*sink, "a", data);
    EXPECT_EQ(ack.status, Status::ok);
    EXPECT_EQ(ack.checksum, test::oracle_fnv(data));
    EXPECT_EQ(sink->fetch("a"), data);
    ASSERT_EQ(sink->inspect().size(), 1u);
    EXPECT_EQ(sink->inspect()[0].kind, EntryKind::dataset);
}

TEST(Sink, ZeroByteLoadHasOffsetBasis) {
    auto sink = memory_sink();
    auto ack = load(*sink, "empty", {});
    EXPECT_EQ(ack.status, Status::ok);
    EXPECT_EQ(ack.checksum, 14695981039346656037ull);
}

TEST(Sink, MismatchedChecksumIsStatusFour) {
    auto sink = memory_sink();
    auto data = test::random_bytes(4096, 2);
    const auto declared = test::oracle_fnv(data);
    data[100] ^= std::byte{0x01};
    auto ack = load(*sink, "m", data, declared);
    EXPECT_EQ(ack.status, Status::checksum_mismatch);
    EXPECT_EQ(ack.checksum, test::oracle_fnv(data));
    EXPECT_EQ(sink->dataset_count(), 0u);
    EXPECT_EQ(sink->loads_rejected(), 1u);
}

TEST(Sink, TruncatedStreamIsInternal) {
    auto sink = memory_sink();
    auto [w, r] = make_pipe(1 << 16);
    const auto data = test::random_bytes(100, 3);
    w->write_all(data);
    w->shutdown();
    EXPECT_THROW(sink->handle_load(*r, Load{{"t", "double", 200, 0}}), Error);
    const auto events = sink->events();
    ASSERT_EQ(events.size(), 2u);
    EXPECT_EQ(events[1].kind, SinkEvent::Kind::load_ack);
    EXPECT_EQ(events[1].status, Status::internal);
    EXPECT_EQ(sink->dataset_count(), 0u);
}

TEST(Sink, DuplicateNameOverwrites) {
    std::ostringstream log;
    SinkOptions o;
    o.log = &log;
    auto sink = memory_sink(o);
    load(*sink, "d", test::random_bytes(10, 4));
    const auto second = test::random_bytes(20, 5);
    load(*sink, "d", second);
    EXPECT_EQ(sink->fetch("d"), second);
    EXPECT_EQ(sink->dataset_count(), 1u);
    EXPECT_NE(log.str().find("event=load_overwrite"), std::string::npos);
}

TEST(Sink, EightyFiveLoadsListed) {
    auto sink = memory_sink();
    for (int i = 0; i < 85; ++i) load(*sink, "f" + std::to_string(i), test::random_bytes(64, i));
    EXPECT_EQ(sink->inspect().size(), 85u);
}

TEST(Sink, EmptyInspectAndUnknownFetch) {
    auto sink = memory_sink();
    EXPECT_TRUE(sink->inspect().empty());
    try {
        sink->fetch("nope");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::not_found);
    }
}

TEST(Sink, CommandGrammar) {
    auto sink = memory_sink();
    EXPECT_EQ(sink->handle_command("create_tar(T, dims)").status, Status::ok);
    EXPECT_EQ(sink->handle_command("create_tar(T, dims)").status, Status::duplicate_name);
    auto missing = sink->handle_command("load_subtar(T, D, r)");
    EXPECT_EQ(missing.status, Status::internal);
    EXPECT_NE(missing.text.find("unknown dataset"), std::string::npos);
    EXPECT_EQ(sink->handle_command("load_subtar(X, D, r)").text.find("unknown tar") != std::string::npos, true);
    load(*sink, "D", test::random_bytes(8, 6));
    EXPECT_EQ(sink->handle_command(R"cmd(load_subtar("T", 'D', "ordered(x, y)", [1,2]))cmd").status, Status::ok);
    for (auto bad : {"", "drop(T)", "create_tar T", "create_tar(\"T)", "load_subtar(T)", "1bad(x)"}) {
        auto r = sink->handle_command(bad);
        EXPECT_EQ(r.status, Status::protocol_violation) << bad;
        EXPECT_NE(r.text.find("parse error"), std::string::npos) << bad;
    }
    const auto cat = sink->inspect();
    EXPECT_EQ(std::count_if(cat.begin(), cat.end(), [](auto& e) { return e.kind == EntryKind::subtar_binding; }), 1);
}

TEST(Sink, InspectDoesNotMutate) {
    auto sink = memory_sink();
    sink->handle_command("create_tar(T)");
    load(*sink, "D", test::random_bytes(8, 7));
    EXPECT_EQ(sink->inspect(), sink->inspect());
}

TEST(Sink, RemovingDatasetDropsBindings) {
    auto sink = memory_sink();
    sink->handle_command("create_tar(T)");
    load(*sink, "D", test::random_bytes(8, 8));
    sink->handle_command("load_subtar(T, D)");
    sink->remove_dataset("D");
    for (const auto& e : sink->inspect()) EXPECT_NE(e.kind, EntryKind::subtar_binding);
}

TEST(Sink, CatalogMatchesStoredPayloads) {
    test::ScratchDir dir;
    SinkOptions o;
    o.store_dir = dir.path();
    auto sink = memory_sink(o);
    for (int i = 0; i < 5; ++i) load(*sink, "p/" + std::to_string(i), test::random_bytes(5000 + i, i));
    for (const auto& e : sink->inspect()) {
        EXPECT_EQ(test::oracle_fnv(sink->fetch(e.name)), e.checksum);
    }
    EXPECT_EQ(dir.file_count(), 5u);
    sink->remove_dataset("p/0");
    EXPECT_EQ(dir.file_count(), 4u);
}

TEST(Sink, FailFirstRejectsThenAccepts) {
    SinkOptions o;
    o.fail_first = 2;
    auto sink = memory_sink(o);
    const auto data = test::random_bytes(100, 9);
    EXPECT_EQ(load(*sink, "x", data).status, Status::internal);
    EXPECT_EQ(load(*sink, "x", data).status, Status::internal);
    EXPECT_EQ(load(*sink, "x", data).status, Status::ok);
    EXPECT_EQ(sink->load_order().size(), 3u);
}

TEST(Sink, ServesLoadsAndCommandsOverTcp) {
    SinkOptions o;
    o.listen = Endpoint::stream("127.0.0.1", 0);
    auto sink = AnalyticSink::start(o);
    const auto data = test::random_bytes(300000, 10);
    auto s = dial_stream(sink->endpoint());
    write_message(*s, Load{{"net", "double", data.size(), test::oracle_fnv(data)}});
    s->write_all(data);
    EXPECT_EQ(read_message(*s, 5000ms), Message(LoadAck{Status::ok, test::oracle_fnv(data)}));
    write_message(*s, Command{"create_tar(T)"});
    EXPECT_EQ(std::get<CommandResponse>(read_message(*s, 5000ms)).status, Status::ok);
    write_message(*s, BlockReq{1, 1});
    EXPECT_EQ(std::get<ErrorFrame>(read_message(*s, 5000ms)).code, 3);
    EXPECT_EQ(sink->fetch("net"), data);
}
