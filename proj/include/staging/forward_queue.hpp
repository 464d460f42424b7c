#pragma once

// FCFS queue of completed datasets. Each entry carries a start ticket: a
// worker must call begin_start(seq) before emitting LOAD and end_start(seq)
// right after, so LOAD starts follow arrival order even with several workers.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <set>

namespace staging {

struct ForwardTicket {
    std::uint32_t dataset_id = 0;
    std::uint64_t seq = 0;  // arrival_seq
};

class ForwardQueue {
  public:
    // Assigns the next arrival_seq. An id already queued is rejected (returns nullopt).
    std::optional<std::uint64_t> push(std::uint32_t dataset_id);

    // Blocks while empty or paused; nullopt once closed.
    std::optional<ForwardTicket> pop();

    void begin_start(std::uint64_t seq);
    void end_start(std::uint64_t seq);

    void pause();
    void resume();
    void close();

    std::size_t size() const;
    bool paused() const;

  private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<ForwardTicket> entries_;
    std::set<std::uint32_t> queued_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t next_start_ = 0;
    bool paused_ = false;
    bool closed_ = false;
};

}  // namespace staging
