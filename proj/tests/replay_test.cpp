#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "staging/client.hpp"
#include "staging/replay.hpp"
#include "test_support.hpp"

using namespace staging;
using namespace staging::wire;

namespace {

const DatasetDescriptor kDesc{"D", "double", 512, 1234};
const BlockGrant kG0{1, 0, 100, 7, 256};
const BlockGrant kG1{1, 1, 101, 8, 256};

enum Ev { REQ0, G0, W0, REQ1, G1, W1, DONE, SYNC };

TraceEvent make(Ev e) {
    switch (e) {
        case REQ0: return to_server(BlockReq{1, 0});
        case G0: return to_client(kG0);
        case W0: return write_event(kG0, 0, 256);
        case REQ1: return to_server(BlockReq{1, 1});
        case G1: return to_client(kG1);
        case W1: return write_event(kG1, 0, 256);
        case DONE: return to_server(DatasetDone{1});
        case SYNC: return to_client(SyncAck{1, Status::ok});
    }
    return {};
}

Trace two_block(const std::vector<Ev>& order) {
    Trace t{to_server(Announce{kDesc, 256}), to_client(AnnounceAck{Status::ok, 1})};
    for (auto e : order) t.push_back(make(e));
    return t;
}

// Causal order of a two-block session: requests in index order, each grant
// after its request, grants in request order, writes after their grant,
// DONE after every write, SYNC_ACK after DONE.
const std::multimap<Ev, Ev> kPredecessors{
    {REQ1, REQ0}, {G0, REQ0}, {G1, REQ1}, {G1, G0},  {W0, G0},
    {W1, G1},     {DONE, W0}, {DONE, W1}, {SYNC, DONE},
};

std::optional<std::size_t> first_violation(const std::vector<Ev>& order) {
    std::set<Ev> seen;
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto [lo, hi] = kPredecessors.equal_range(order[i]);
        for (auto it = lo; it != hi; ++it) {
            if (!seen.contains(it->second)) return i;
        }
        seen.insert(order[i]);
    }
    return std::nullopt;
}

}  // namespace

TEST(Replay, EmptyTraceIsAccepted) { EXPECT_TRUE(replay_check({}).accepted); }

TEST(Replay, SequentialTwoBlockTraceAccepted) {
    auto v = replay_check(two_block({REQ0, G0, W0, REQ1, G1, W1, DONE, SYNC}));
    EXPECT_TRUE(v.accepted) << v.diagnostic;
}

TEST(Replay, SyncBeforeDoneRejectedAtSync) {
    auto v = replay_check(two_block({REQ0, G0, W0, REQ1, G1, W1, SYNC, DONE}));
    ASSERT_FALSE(v.accepted);
    EXPECT_EQ(v.offending_index, 8u);
}

TEST(Replay, AllInterleavingsOfTwoBlocksMatchCausalOrder) {
    std::vector<Ev> order{REQ0, G0, W0, REQ1, G1, W1, DONE, SYNC};
    std::sort(order.begin(), order.end());
    int accepted = 0, total = 0;
    do {
        ++total;
        const auto expected = first_violation(order);
        const auto v = replay_check(two_block(order));
        ASSERT_EQ(v.accepted, !expected.has_value());
        if (expected) {
            ASSERT_EQ(v.offending_index, *expected + 2);
        } else {
            ++accepted;
        }
    } while (std::next_permutation(order.begin(), order.end()));
    EXPECT_EQ(total, 40320);
    // W0 before G1: 3 orders of {REQ1, G0, W0}; W0 after G1: 2 x 2. Seven in all.
    EXPECT_EQ(accepted, 7);
}

TEST(Replay, PrefixesOfValidTracesAreAccepted) {
    const auto full = two_block({REQ0, REQ1, G0, W0, G1, W1, DONE, SYNC});
    for (std::size_t n = 0; n <= full.size(); ++n) {
        EXPECT_TRUE(replay_check(std::span(full).first(n)).accepted) << n;
    }
}

TEST(Replay, ZeroByteDatasetHasNoBlocks) {
    Trace t{to_server(Announce{{"z", "double", 0, 0}, 4096}), to_client(AnnounceAck{Status::ok, 3}),
            to_server(DatasetDone{3}), to_client(SyncAck{3, Status::ok})};
    EXPECT_TRUE(replay_check(t).accepted);
    t.insert(t.begin() + 2, to_server(BlockReq{3, 0}));
    EXPECT_FALSE(replay_check(t).accepted);
}

TEST(Replay, RetryReturnsIdenticalGrant) {
    auto t = two_block({REQ0, G0});
    t.push_back(to_server(BlockReq{1, 0}));
    t.push_back(to_client(kG0));
    EXPECT_TRUE(replay_check(t).accepted);
    t.back() = to_client(BlockGrant{1, 0, 100, 9, 256});
    EXPECT_FALSE(replay_check(t).accepted);
}

TEST(Replay, RejectedAnnounceEndsSession) {
    Trace t{to_server(Announce{kDesc, 256}), to_client(AnnounceAck{Status::duplicate_name, 0})};
    EXPECT_TRUE(replay_check(t).accepted);
    t.push_back(to_server(BlockReq{0, 0}));
    EXPECT_FALSE(replay_check(t).accepted);
}

TEST(Replay, MismatchedChecksumMayYieldStatusFour) {
    auto t = two_block({REQ0, G0, W0, REQ1, G1, W1, DONE});
    t.push_back(to_client(SyncAck{1, Status::checksum_mismatch}));
    EXPECT_TRUE(replay_check(t).accepted);
    t.back() = to_client(SyncAck{1, Status::capacity});
    EXPECT_FALSE(replay_check(t).accepted);
}

TEST(Replay, RecordedLiveSessionsConform) {
    auto recorder = std::make_shared<TraceRecorder>();
    ServerConfig cfg;
    cfg.observer = recorder;
    test::Pipeline p(cfg);
    ClientOptions co;
    co.block_size = 4096;
    co.worker_count = 2;
    co.env_overrides = false;
    auto client = ServerHandle::open(p.server->endpoint(), co);
    std::vector<std::vector<std::byte>> bufs;
    for (int i = 0; i < 20; ++i) bufs.push_back(test::random_bytes(static_cast<std::size_t>(i) * 3001, i));
    for (int i = 0; i < 20; ++i) client->write({"live-" + std::to_string(i)}, bufs[i]);
    ASSERT_TRUE(client->sync().all_acked());
    const auto traces = recorder->traces();
    ASSERT_EQ(traces.size(), 20u);
    for (const auto& t : traces) {
        auto v = replay_check(t);
        EXPECT_TRUE(v.accepted) << v.diagnostic;
    }
}
