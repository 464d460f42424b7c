#pragma once

#include <mutex>
#include <ostream>
#include <string>
#include <string_view>

namespace staging {

// One event per line: ts=<UTC ISO-8601> event=<name> dataset=<name|-> detail=<text>.
// Values containing spaces or quotes are double-quoted.
class Log {
  public:
    explicit Log(std::ostream* out = nullptr) : out_(out) {}

    void event(std::string_view event, std::string_view dataset = {}, std::string_view detail = {});
    bool enabled() const noexcept { return out_ != nullptr; }

    static std::string format(std::string_view event, std::string_view dataset, std::string_view detail);

  private:
    std::mutex mu_;
    std::ostream* out_;
};

}  // namespace staging
