#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace staging {

enum class Scheme { loopback, stream };

// Address of a listener. Loopback names resolve only inside the current
// process; stream endpoints are "host:port" TCP addresses.
struct Endpoint {
    Scheme scheme = Scheme::stream;
    std::string address;

    // Accepts "loopback:<name>", "stream:<host>:<port>" or plain "<host>:<port>".
    static Endpoint parse(std::string_view text);
    static Endpoint loopback(std::string name);
    static Endpoint stream(std::string host, std::uint16_t port);

    std::string host() const;
    std::uint16_t port() const;
    std::string to_string() const;

    bool operator==(const Endpoint&) const = default;
};

}  // namespace staging
