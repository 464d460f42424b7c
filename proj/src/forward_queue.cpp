#include "staging/forward_queue.hpp"

namespace staging {

std::optional<std::uint64_t> ForwardQueue::push(std::uint32_t dataset_id) {
    std::lock_guard lk(mu_);
    if (closed_ || !queued_.insert(dataset_id).second) return std::nullopt;
    const auto seq = next_seq_++;
    entries_.push_back({dataset_id, seq});
    cv_.notify_all();
    return seq;
}

std::optional<ForwardTicket> ForwardQueue::pop() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return closed_ || (!paused_ && !entries_.empty()); });
    if (closed_) return std::nullopt;
    auto t = entries_.front();
    entries_.pop_front();
    queued_.erase(t.dataset_id);
    return t;
}

void ForwardQueue::begin_start(std::uint64_t seq) {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return closed_ || next_start_ == seq; });
}

void ForwardQueue::end_start(std::uint64_t seq) {
    std::lock_guard lk(mu_);
    if (next_start_ == seq) ++next_start_;
    cv_.notify_all();
}

void ForwardQueue::pause() {
    std::lock_guard lk(mu_);
    paused_ = true;
}

void ForwardQueue::resume() {
    std::lock_guard lk(mu_);
    paused_ = false;
    cv_.notify_all();
}

void ForwardQueue::close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    cv_.notify_all();
}

std::size_t ForwardQueue::size() const {
    std::lock_guard lk(mu_);
    return entries_.size();
}

bool ForwardQueue::paused() const {
    std::lock_guard lk(mu_);
    return paused_;
}

}  // namespace staging
