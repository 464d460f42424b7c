#include "staging/endpoint.hpp"

#include <charconv>

#include "staging/error.hpp"

namespace staging {

namespace {
constexpr std::string_view kLoopbackPrefix = "loopback:";
constexpr std::string_view kStreamPrefix = "stream:";
}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
    if (text.starts_with(kLoopbackPrefix)) {
        auto name = text.substr(kLoopbackPrefix.size());
        if (name.empty()) throw Error(Errc::argument, "empty loopback name");
        return loopback(std::string(name));
    }
    if (text.starts_with(kStreamPrefix)) text.remove_prefix(kStreamPrefix.size());
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size()) {
        throw Error(Errc::argument, "endpoint must be host:port, got '" + std::string(text) + "'");
    }
    auto port_text = text.substr(colon + 1);
    unsigned port = 0;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port > 65535) {
        throw Error(Errc::argument, "bad port '" + std::string(port_text) + "'");
    }
    return stream(std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port));
}

Endpoint Endpoint::loopback(std::string name) { return Endpoint{Scheme::loopback, std::move(name)}; }

Endpoint Endpoint::stream(std::string host, std::uint16_t port) {
    return Endpoint{Scheme::stream, std::move(host) + ":" + std::to_string(port)};
}

std::string Endpoint::host() const {
    if (scheme == Scheme::loopback) return address;
    return address.substr(0, address.rfind(':'));
}

std::uint16_t Endpoint::port() const {
    if (scheme == Scheme::loopback) return 0;
    return static_cast<std::uint16_t>(std::stoul(address.substr(address.rfind(':') + 1)));
}

std::string Endpoint::to_string() const {
    return scheme == Scheme::loopback ? std::string(kLoopbackPrefix) + address : address;
}

}  // namespace staging
