#include "cli_support.hpp"

#include <cctype>
#include <charconv>
#include <pthread.h>

#include "staging/error.hpp"

namespace staging::cli {

std::uint64_t parse_bytes(const std::string& text) {
    std::uint64_t value = 0;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr == text.data()) throw Error(Errc::argument, "bad byte size '" + text + "'");
    std::string suffix(ptr, end);
    for (auto& ch : suffix) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    unsigned shift = 0;
    if (suffix.empty() || suffix == "B") shift = 0;
    else if (suffix == "K" || suffix == "KIB" || suffix == "KB") shift = 10;
    else if (suffix == "M" || suffix == "MIB" || suffix == "MB") shift = 20;
    else if (suffix == "G" || suffix == "GIB" || suffix == "GB") shift = 30;
    else throw Error(Errc::argument, "bad size suffix in '" + text + "'");
    if (shift && value > (~std::uint64_t{0} >> shift)) throw Error(Errc::argument, "byte size overflows: " + text);
    return value << shift;
}

namespace {
std::vector<std::string> split(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto comma = text.find(',', start);
        if (comma == std::string::npos) comma = text.size();
        if (comma > start) out.push_back(text.substr(start, comma - start));
        start = comma + 1;
    }
    if (out.empty()) throw Error(Errc::argument, "empty list");
    return out;
}
}  // namespace

std::vector<std::uint64_t> parse_byte_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split(text)) out.push_back(parse_bytes(item));
    return out;
}

std::vector<std::uint32_t> parse_count_list(const std::string& text) {
    std::vector<std::uint32_t> out;
    for (const auto& item : split(text)) {
        std::uint32_t v = 0;
        auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc{} || ptr != item.data() + item.size()) throw Error(Errc::argument, "bad count '" + item + "'");
        out.push_back(v);
    }
    return out;
}

void block_termination_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

int wait_for_termination() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    int sig = 0;
    sigwait(&set, &sig);
    return sig;
}

}  // namespace staging::cli
