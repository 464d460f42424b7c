#include "staging/error.hpp"

namespace staging {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::none: return "ok";
        case Errc::connection: return "connection";
        case Errc::timeout: return "timeout";
        case Errc::size: return "size";
        case Errc::closed: return "closed";
        case Errc::argument: return "argument";
        case Errc::resource: return "resource";
        case Errc::not_found: return "not_found";
        case Errc::access: return "access";
        case Errc::bounds: return "bounds";
        case Errc::decode: return "decode";
        case Errc::encode: return "encode";
        case Errc::duplicate: return "duplicate";
        case Errc::protocol: return "protocol";
        case Errc::capacity: return "capacity";
        case Errc::io: return "io";
    }
    return "unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

DecodeError::DecodeError(std::size_t offset, const std::string& what)
    : Error(Errc::decode, what + " at offset " + std::to_string(offset)), offset_(offset) {}

}  // namespace staging
