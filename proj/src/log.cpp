#include "staging/log.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

namespace staging {

namespace {

std::string quote(std::string_view v) {
    if (v.empty()) return "-";
    if (v.find_first_of(" \t\"=") == std::string_view::npos) return std::string(v);
    std::string out = "\"";
    for (char c : v) {
        if (c == '"' || c == '\\') out += '\\';
        out += c == '\n' ? ' ' : c;
    }
    return out + '"';
}

}  // namespace

std::string Log::format(std::string_view event, std::string_view dataset, std::string_view detail) {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    ::gmtime_r(&secs, &tm);
    char ts[40];
    const auto n = std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%S", &tm);
    std::snprintf(ts + n, sizeof ts - n, ".%03dZ", static_cast<int>(ms));
    return "ts=" + std::string(ts) + " event=" + quote(event) + " dataset=" + quote(dataset) + " detail=" + quote(detail);
}

void Log::event(std::string_view event, std::string_view dataset, std::string_view detail) {
    if (!out_) return;
    auto line = format(event, dataset, detail);
    std::lock_guard lk(mu_);
    *out_ << line << '\n';
    out_->flush();
}

}  // namespace staging
