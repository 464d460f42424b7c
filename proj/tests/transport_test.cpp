#include <gtest/gtest.h>
#include <sys/mman.h>

#include <cstring>
#include <thread>

#include "staging/byte_stream.hpp"
#include "staging/region_table.hpp"
#include "staging/transport.hpp"
#include "staging/wire.hpp"
#include "test_support.hpp"

using namespace staging;
using namespace std::chrono_literals;

namespace {

// Stream channels only carry whole protocol frames, so messages are CMD frames.
std::vector<std::byte> bytes_of(std::string_view s) { return wire::encode(wire::Command{std::string(s)}); }

struct Link {
    std::shared_ptr<RegionTable> regions = std::make_shared<RegionTable>();
    std::unique_ptr<ChannelListener> listener;
    std::unique_ptr<Channel> active, passive;

    explicit Link(Scheme scheme, ListenOptions lo = {}, ConnectOptions co = {}) {
        lo.regions = regions;
        listener = listen(scheme == Scheme::loopback ? Endpoint::loopback(test::unique("tp"))
                                                     : Endpoint::stream("127.0.0.1", 0),
                          lo);
        std::thread t([&] { passive = listener->accept(5000ms); });
        active = connect(listener->endpoint(), co);
        t.join();
    }
};

class TransportTest : public ::testing::TestWithParam<Scheme> {};

}  // namespace

TEST_P(TransportTest, MessagesArriveInOrderBothWays) {
    Link l(GetParam());
    ASSERT_TRUE(l.passive);
    for (int i = 0; i < 100; ++i) l.active->send(bytes_of("m" + std::to_string(i)));
    for (int i = 0; i < 100; ++i) EXPECT_EQ(l.passive->recv(1000ms), bytes_of("m" + std::to_string(i)));
    l.passive->send(bytes_of("back"));
    EXPECT_EQ(l.active->recv(1000ms), bytes_of("back"));
    EXPECT_FALSE(l.active->try_recv().has_value());
}

TEST_P(TransportTest, EmptyBodyFrameIsDelivered) {
    Link l(GetParam());
    l.active->send(bytes_of(""));
    EXPECT_EQ(l.passive->recv(1000ms), bytes_of(""));
}

TEST(Transport, StreamChannelRejectsNonFrames) {
    Link l(Scheme::stream);
    const std::vector<std::byte> junk(4, std::byte{1});
    EXPECT_THROW(l.active->send(junk), Error);
    l.active->send(bytes_of("still fine"));
    EXPECT_EQ(l.passive->recv(1000ms), bytes_of("still fine"));
}

TEST_P(TransportTest, RecvTimesOut) {
    Link l(GetParam());
    try {
        l.passive->recv(20ms);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::timeout);
    }
}

TEST_P(TransportTest, OversizeSendRejectedWithoutDelivery) {
    Link l(GetParam());
    // Sparse mapping: nothing is touched because the size check comes first.
    const std::size_t n = kMaxMessage + 1;
    void* p = ::mmap(nullptr, n, PROT_READ, MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0);
    ASSERT_NE(p, MAP_FAILED);
    try {
        l.active->send(std::span(static_cast<const std::byte*>(p), n));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::size);
    }
    ::munmap(p, n);
    l.active->send(bytes_of("after"));
    EXPECT_EQ(l.passive->recv(1000ms), bytes_of("after"));
}

TEST_P(TransportTest, RemoteWriteLandsInRegisteredRegion) {
    Link l(GetParam());
    std::vector<std::byte> backing(64);
    auto region = l.regions->register_region(backing);
    const auto data = test::random_bytes(32, 1);
    const auto op = l.active->remote_write(data, region.token, region.access_key, 16);
    auto comps = l.active->poll_completions(16, 2000ms);
    std::vector<CompletionEvent> writes;
    while (writes.empty()) {
        for (auto& c : comps) {
            if (c.kind == OpKind::remote_write) writes.push_back(c);
        }
        if (writes.empty()) comps = l.active->poll_completions(16, 2000ms);
    }
    EXPECT_EQ(writes[0].op_id, op);
    EXPECT_TRUE(writes[0].ok());
    EXPECT_EQ(writes[0].bytes, 32u);
    EXPECT_TRUE(std::equal(data.begin(), data.end(), backing.begin() + 16));
    EXPECT_EQ(l.regions->bytes_written(region.token), 32u);
    EXPECT_EQ(l.active->stats().bytes_sourced, 32u);
}

TEST_P(TransportTest, BadKeyAndBoundsReportedThroughCompletion) {
    Link l(GetParam());
    auto region = l.regions->register_region(std::size_t{16});
    const auto data = test::random_bytes(8, 2);
    l.active->remote_write(data, region.token, region.access_key ^ 1, 0);
    l.active->remote_write(data, region.token, region.access_key, 12);
    std::vector<Errc> seen;
    test::eventually([&] {
        for (auto& c : l.active->poll_completions(16, 10ms)) {
            if (c.kind == OpKind::remote_write) seen.push_back(c.status);
        }
        return seen.size() == 2;
    });
    ASSERT_EQ(seen.size(), 2u);
    EXPECT_EQ(seen[0], Errc::access);
    EXPECT_EQ(seen[1], Errc::bounds);
}

TEST_P(TransportTest, WriteAfterDeregistrationIsRejected) {
    Link l(GetParam());
    auto region = l.regions->register_region(std::size_t{16});
    l.regions->deregister_region(region.token);
    const auto data = test::random_bytes(8, 3);
    l.active->remote_write(data, region.token, region.access_key, 0);
    Errc status = Errc::none;
    test::eventually([&] {
        for (auto& c : l.active->poll_completions(16, 10ms)) {
            if (c.kind == OpKind::remote_write) status = c.status;
        }
        return status != Errc::none;
    });
    EXPECT_EQ(status, Errc::access);
}

TEST_P(TransportTest, CloseIsObservedByPeer) {
    Link l(GetParam());
    l.active->close();
    EXPECT_TRUE(test::eventually([&] { return l.passive->state() != ChannelState::established || [&] {
        try {
            l.passive->recv(10ms);
        } catch (const Error& e) {
            return e.code() == Errc::closed;
        }
        return false;
    }(); }));
    EXPECT_THROW(l.active->send(bytes_of("x")), Error);
}

INSTANTIATE_TEST_SUITE_P(Both, TransportTest, ::testing::Values(Scheme::loopback, Scheme::stream),
                         [](const auto& info) { return info.param == Scheme::loopback ? "loopback" : "stream"; });

TEST(Transport, ConnectWithoutListenerFails) {
    try {
        connect(Endpoint::loopback(test::unique("nobody")));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::connection);
    }
}

TEST(Transport, CompletionQueueDrainsInOrder) {
    CompletionQueue q;
    for (std::uint64_t i = 1; i <= 5; ++i) q.push({i, OpKind::send, Errc::none, 0});
    auto first = q.poll(3, 0ms);
    ASSERT_EQ(first.size(), 3u);
    EXPECT_EQ(first[0].op_id, 1u);
    EXPECT_EQ(q.pending(), 2u);
    EXPECT_EQ(q.poll(10, 0ms).back().op_id, 5u);
    EXPECT_TRUE(q.poll(10, 5ms).empty());
}

TEST(ByteStreamPipe, ReadExactAcrossChunks) {
    auto [a, b] = make_pipe(64);
    const auto data = test::random_bytes(1000, 4);
    std::thread w([&] { a->write_all(data); });
    std::vector<std::byte> got(1000);
    b->read_exact(got, 2000ms);
    w.join();
    EXPECT_EQ(got, data);
    a->shutdown();
    std::byte one[1];
    EXPECT_EQ(b->read_some(one, 200ms), 0u);
}

TEST(RegionTable, RegisterLookupDeregister) {
    RegionTable t({7, true});
    auto a = t.register_region(std::size_t{100});
    auto b = t.register_region(std::size_t{50});
    EXPECT_NE(a.token, b.token);
    EXPECT_EQ(t.registered_count(), 2u);
    EXPECT_EQ(t.lookup(a.token)->length, 100u);
    t.deregister_region(a.token);
    t.deregister_region(a.token);
    EXPECT_EQ(t.registered_count(), 1u);
    EXPECT_FALSE(t.lookup(a.token)->registered);
    t.erase(a.token);
    EXPECT_FALSE(t.lookup(a.token));
    try {
        t.deregister_region(a.token);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::not_found);
    }
}

TEST(RegionTable, AccountingCanBeDisabled) {
    RegionTable t({1, false});
    auto r = t.register_region(std::size_t{8});
    const auto d = test::random_bytes(8, 5);
    EXPECT_EQ(t.write(r.token, r.access_key, 0, d), Errc::none);
    EXPECT_FALSE(t.bytes_written(r.token));
    EXPECT_TRUE(std::equal(d.begin(), d.end(), t.backing(r.token).begin()));
}

TEST(RegionTable, ConcurrentWritesAndDeregistration) {
    RegionTable t;
    auto r = t.register_region(std::size_t{1 << 16});
    std::atomic<int> ok{0}, rejected{0};
    std::vector<std::thread> writers;
    for (int w = 0; w < 4; ++w) {
        writers.emplace_back([&, w] {
            const auto d = test::random_bytes(256, w);
            for (int i = 0; i < 200; ++i) {
                auto s = t.write(r.token, r.access_key, static_cast<std::uint64_t>(w * 256), d);
                (s == Errc::none ? ok : rejected)++;
            }
        });
    }
    std::this_thread::sleep_for(1ms);
    t.deregister_region(r.token);
    for (auto& th : writers) th.join();
    EXPECT_EQ(ok + rejected, 800);
    // Nothing lands once deregistration returned.
    const auto d = test::random_bytes(8, 9);
    EXPECT_EQ(t.write(r.token, r.access_key, 0, d), Errc::access);
}
