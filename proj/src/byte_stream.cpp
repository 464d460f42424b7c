#include "staging/byte_stream.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "staging/error.hpp"

namespace staging {

void ByteStream::write_all(std::span<const std::byte> head, std::span<const std::byte> body) {
    write_all(head);
    write_all(body);
}

void ByteStream::read_exact(std::span<std::byte> out, Millis timeout) {
    std::size_t done = 0;
    while (done < out.size()) {
        auto n = read_some(out.subspan(done), timeout);
        if (n == 0) {
            throw Error(Errc::closed, "stream ended after " + std::to_string(done) + " of " +
                                          std::to_string(out.size()) + " bytes");
        }
        done += n;
    }
}

namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

int poll_timeout(Millis timeout) {
    return static_cast<int>(std::clamp<Millis::rep>(timeout.count(), 0, 1 << 30));
}

// ---------------------------------------------------------------- sockets

class SocketStream final : public ByteStream {
  public:
    explicit SocketStream(int fd) : fd_(fd) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    ~SocketStream() override {
        shutdown();
        ::close(fd_);
    }

    void write_all(std::span<const std::byte> data) override { write_all(data, {}); }

    void write_all(std::span<const std::byte> head, std::span<const std::byte> body) override {
        iovec iov[2] = {{const_cast<std::byte*>(head.data()), head.size()},
                        {const_cast<std::byte*>(body.data()), body.size()}};
        int first = 0;
        while (first < 2) {
            if (iov[first].iov_len == 0) {
                ++first;
                continue;
            }
            msghdr msg{};
            msg.msg_iov = iov + first;
            msg.msg_iovlen = static_cast<std::size_t>(2 - first);
            ssize_t n = ::sendmsg(fd_, &msg, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error(Errc::closed, errno_text("send"));
            }
            auto left = static_cast<std::size_t>(n);
            while (left > 0 && first < 2) {
                auto step = std::min(left, iov[first].iov_len);
                iov[first].iov_base = static_cast<char*>(iov[first].iov_base) + step;
                iov[first].iov_len -= step;
                left -= step;
                if (iov[first].iov_len == 0) ++first;
            }
        }
    }

    std::size_t read_some(std::span<std::byte> out, Millis timeout) override {
        if (out.empty()) return 0;
        for (;;) {
            pollfd p{fd_, POLLIN, 0};
            int r = ::poll(&p, 1, poll_timeout(timeout));
            if (r < 0) {
                if (errno == EINTR) continue;
                throw Error(Errc::io, errno_text("poll"));
            }
            if (r == 0) throw Error(Errc::timeout, "no data within " + std::to_string(timeout.count()) + " ms");
            ssize_t n = ::recv(fd_, out.data(), out.size(), 0);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                if (errno == ECONNRESET || errno == ENOTCONN) return 0;
                throw Error(Errc::io, errno_text("recv"));
            }
            return static_cast<std::size_t>(n);
        }
    }

    void shutdown() noexcept override {
        if (!shut_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
    }

  private:
    int fd_;
    std::atomic<bool> shut_{false};
};

sockaddr_in resolve(const Endpoint& ep) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port());
    auto host = ep.host();
    if (host == "localhost") host = "127.0.0.1";
    if (host.empty() || host == "*") host = "0.0.0.0";
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;

    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
        throw Error(Errc::connection, "cannot resolve host '" + host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
}

class TcpAcceptor final : public StreamAcceptor {
  public:
    explicit TcpAcceptor(const Endpoint& ep) {
        auto addr = resolve(ep);
        fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (fd_ < 0) throw Error(Errc::resource, errno_text("socket"));
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            auto msg = errno_text(("bind " + ep.to_string()).c_str());
            ::close(fd_);
            throw Error(Errc::connection, msg);
        }
        if (::listen(fd_, 128) != 0) {
            auto msg = errno_text("listen");
            ::close(fd_);
            throw Error(Errc::connection, msg);
        }
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
        char buf[INET_ADDRSTRLEN] = {};
        ::inet_ntop(AF_INET, &bound.sin_addr, buf, sizeof(buf));
        endpoint_ = Endpoint::stream(buf, ntohs(bound.sin_port));
    }
    ~TcpAcceptor() override {
        close();
        ::close(fd_);
    }

    std::unique_ptr<ByteStream> accept(Millis timeout) override {
        if (closed_) return nullptr;
        pollfd p{fd_, POLLIN, 0};
        int r = ::poll(&p, 1, poll_timeout(timeout));
        if (r <= 0 || closed_) return nullptr;
        int c = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (c < 0) return nullptr;
        return std::make_unique<SocketStream>(c);
    }

    void close() noexcept override {
        if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
    }

    Endpoint endpoint() const override { return endpoint_; }

  private:
    int fd_ = -1;
    std::atomic<bool> closed_{false};
    Endpoint endpoint_;
};

std::unique_ptr<ByteStream> dial_tcp(const Endpoint& ep, Millis timeout) {
    auto addr = resolve(ep);
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0);
    if (fd < 0) throw Error(Errc::resource, errno_text("socket"));
    int r = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    if (r != 0 && errno != EINPROGRESS) {
        auto msg = errno_text(("connect " + ep.to_string()).c_str());
        ::close(fd);
        throw Error(Errc::connection, msg);
    }
    if (r != 0) {
        pollfd p{fd, POLLOUT, 0};
        int pr = ::poll(&p, 1, poll_timeout(timeout));
        if (pr == 0) {
            ::close(fd);
            throw Error(Errc::timeout, "connect " + ep.to_string() + " timed out");
        }
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (pr < 0 || err != 0) {
            errno = err;
            auto msg = errno_text(("connect " + ep.to_string()).c_str());
            ::close(fd);
            throw Error(Errc::connection, msg);
        }
    }
    ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
    return std::make_unique<SocketStream>(fd);
}

// ---------------------------------------------------------------- pipes

// One direction of a pipe: a bounded ring buffer.
struct PipeBuffer {
    explicit PipeBuffer(std::size_t capacity) : ring(capacity) {}

    std::mutex mu;
    std::condition_variable cv;
    std::vector<std::byte> ring;
    std::size_t head = 0;
    std::size_t used = 0;
    bool writer_closed = false;  // reader sees EOF once drained
    bool reader_closed = false;  // writes fail
};

class PipeStream final : public ByteStream {
  public:
    PipeStream(std::shared_ptr<PipeBuffer> in, std::shared_ptr<PipeBuffer> out)
        : in_(std::move(in)), out_(std::move(out)) {}
    ~PipeStream() override { shutdown(); }

    void write_all(std::span<const std::byte> data) override {
        auto& b = *out_;
        std::unique_lock lk(b.mu);
        std::size_t done = 0;
        while (done < data.size()) {
            b.cv.wait(lk, [&] { return b.reader_closed || b.writer_closed || b.used < b.ring.size(); });
            if (b.reader_closed || b.writer_closed) throw Error(Errc::closed, "pipe closed");
            const std::size_t cap = b.ring.size();
            const std::size_t tail = (b.head + b.used) % cap;
            const std::size_t n = std::min({data.size() - done, cap - b.used, cap - tail});
            std::memcpy(b.ring.data() + tail, data.data() + done, n);
            b.used += n;
            done += n;
            b.cv.notify_all();
        }
    }

    std::size_t read_some(std::span<std::byte> out, Millis timeout) override {
        if (out.empty()) return 0;
        auto& b = *in_;
        std::unique_lock lk(b.mu);
        if (!b.cv.wait_for(lk, timeout, [&] { return b.used > 0 || b.writer_closed || b.reader_closed; })) {
            throw Error(Errc::timeout, "no data within " + std::to_string(timeout.count()) + " ms");
        }
        if (b.used == 0 || b.reader_closed) return 0;
        const std::size_t cap = b.ring.size();
        const std::size_t n = std::min({out.size(), b.used, cap - b.head});
        std::memcpy(out.data(), b.ring.data() + b.head, n);
        b.head = (b.head + n) % cap;
        b.used -= n;
        b.cv.notify_all();
        return n;
    }

    void shutdown() noexcept override {
        {
            std::lock_guard lk(out_->mu);
            out_->writer_closed = true;
            out_->cv.notify_all();
        }
        {
            std::lock_guard lk(in_->mu);
            in_->reader_closed = true;
            in_->cv.notify_all();
        }
    }

  private:
    std::shared_ptr<PipeBuffer> in_;
    std::shared_ptr<PipeBuffer> out_;
};

// Process-wide table of named in-process stream listeners.
class LoopbackStreamAcceptor;

struct LoopbackStreamRegistry {
    std::mutex mu;
    std::map<std::string, LoopbackStreamAcceptor*> listeners;

    static LoopbackStreamRegistry& instance() {
        static LoopbackStreamRegistry r;
        return r;
    }
};

class LoopbackStreamAcceptor final : public StreamAcceptor {
  public:
    explicit LoopbackStreamAcceptor(std::string name) : name_(std::move(name)) {
        auto& reg = LoopbackStreamRegistry::instance();
        std::lock_guard lk(reg.mu);
        if (!reg.listeners.emplace(name_, this).second) {
            throw Error(Errc::connection, "loopback stream name '" + name_ + "' already bound");
        }
    }
    ~LoopbackStreamAcceptor() override { close(); }

    std::unique_ptr<ByteStream> accept(Millis timeout) override {
        std::unique_lock lk(mu_);
        cv_.wait_for(lk, timeout, [&] { return closed_ || !pending_.empty(); });
        if (closed_ || pending_.empty()) return nullptr;
        auto s = std::move(pending_.front());
        pending_.pop_front();
        return s;
    }

    void close() noexcept override {
        {
            auto& reg = LoopbackStreamRegistry::instance();
            std::lock_guard lk(reg.mu);
            auto it = reg.listeners.find(name_);
            if (it != reg.listeners.end() && it->second == this) reg.listeners.erase(it);
        }
        std::lock_guard lk(mu_);
        closed_ = true;
        pending_.clear();
        cv_.notify_all();
    }

    Endpoint endpoint() const override { return Endpoint::loopback(name_); }

    // Called with the registry lock held, so the acceptor cannot vanish.
    void enqueue(std::unique_ptr<ByteStream> s) {
        std::lock_guard lk(mu_);
        pending_.push_back(std::move(s));
        cv_.notify_all();
    }

  private:
    std::string name_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::unique_ptr<ByteStream>> pending_;
    bool closed_ = false;
};

}  // namespace

std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_pipe(std::size_t capacity) {
    auto a_to_b = std::make_shared<PipeBuffer>(capacity);
    auto b_to_a = std::make_shared<PipeBuffer>(capacity);
    return {std::make_unique<PipeStream>(b_to_a, a_to_b), std::make_unique<PipeStream>(a_to_b, b_to_a)};
}

std::unique_ptr<StreamAcceptor> listen_stream(const Endpoint& endpoint) {
    if (endpoint.scheme == Scheme::loopback) return std::make_unique<LoopbackStreamAcceptor>(endpoint.address);
    return std::make_unique<TcpAcceptor>(endpoint);
}

std::unique_ptr<ByteStream> dial_stream(const Endpoint& endpoint, Millis timeout) {
    if (endpoint.scheme == Scheme::stream) return dial_tcp(endpoint, timeout);
    auto& reg = LoopbackStreamRegistry::instance();
    std::lock_guard lk(reg.mu);
    auto it = reg.listeners.find(endpoint.address);
    if (it == reg.listeners.end()) {
        throw Error(Errc::connection, "no loopback stream listener named '" + endpoint.address + "'");
    }
    auto [client, server] = make_pipe();
    it->second->enqueue(std::move(server));
    return std::move(client);
}

}  // namespace staging
