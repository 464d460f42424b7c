#pragma once

// Shared bits of the command-line tools: byte-size parsing and signal waits.

#include <csignal>
#include <cstdint>
#include <string>
#include <vector>

namespace staging::cli {

// "4096", "64K", "64KiB", "1M", "2G". Suffixes are binary multiples.
std::uint64_t parse_bytes(const std::string& text);
// Comma-separated list of byte sizes.
std::vector<std::uint64_t> parse_byte_list(const std::string& text);
std::vector<std::uint32_t> parse_count_list(const std::string& text);

// Blocks SIGINT/SIGTERM in the calling thread (call before spawning others)
// and waits for one of them.
int wait_for_termination();
void block_termination_signals();

}  // namespace staging::cli
