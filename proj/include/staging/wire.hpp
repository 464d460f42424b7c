#pragma once

// Staging protocol messages and their bit-exact frame codec.
//
// Body layouts (little-endian):
//   ANNOUNCE      0x01  name_len u8, name, type_len u8, type, total_size u64, checksum u64, block_size u64
//   ANNOUNCE_ACK  0x02  status u8, dataset_id u32
//   BLOCK_REQ     0x03  dataset_id u32, block_index u32
//   BLOCK_GRANT   0x04  dataset_id u32, block_index u32, region_token u64, access_key u32, region_length u64
//   DATASET_DONE  0x05  dataset_id u32
//   SYNC_ACK      0x06  dataset_id u32, status u8
//   CMD           0x07  text
//   CMD_RESP      0x08  status u8, text
//   ERROR         0x09  code u16, text
//   WRITE_FRAME   0x10  region_token u64, access_key u32, offset u64, payload
//   LOAD          0x20  name_len u8, name, type_len u8, type, total_size u64, checksum u64
//   LOAD_ACK      0x21  status u8, checksum u64
//
// A LOAD frame is followed on the stream by exactly total_size raw payload bytes.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "staging/byte_stream.hpp"
#include "staging/frame.hpp"

namespace staging::wire {

enum class Tag : std::uint8_t {
    announce = 0x01,
    announce_ack = 0x02,
    block_req = 0x03,
    block_grant = 0x04,
    dataset_done = 0x05,
    sync_ack = 0x06,
    cmd = 0x07,
    cmd_resp = 0x08,
    error = 0x09,
    write_frame = frame::kWriteFrameTag,
    load = 0x20,
    load_ack = 0x21,
};

enum class Status : std::uint8_t {
    ok = 0,
    capacity = 1,
    duplicate_name = 2,
    protocol_violation = 3,
    checksum_mismatch = 4,
    internal = 5,
};

std::string_view to_string(Tag tag) noexcept;
std::string_view to_string(Status status) noexcept;

inline constexpr std::size_t kMaxNameLength = 255;
inline constexpr std::size_t kMaxTypeLength = 63;
inline constexpr std::size_t kMaxTextLength = 64 * 1024;

struct DatasetDescriptor {
    std::string name;
    std::string element_type;
    std::uint64_t total_size = 0;
    std::uint64_t checksum = 0;

    bool operator==(const DatasetDescriptor&) const = default;
};

struct Announce {
    DatasetDescriptor descriptor;
    std::uint64_t block_size = 0;
    bool operator==(const Announce&) const = default;
};

struct AnnounceAck {
    Status status = Status::ok;
    std::uint32_t dataset_id = 0;
    bool operator==(const AnnounceAck&) const = default;
};

struct BlockReq {
    std::uint32_t dataset_id = 0;
    std::uint32_t block_index = 0;
    bool operator==(const BlockReq&) const = default;
};

struct BlockGrant {
    std::uint32_t dataset_id = 0;
    std::uint32_t block_index = 0;
    std::uint64_t region_token = 0;
    std::uint32_t access_key = 0;
    std::uint64_t region_length = 0;
    bool operator==(const BlockGrant&) const = default;
};

struct DatasetDone {
    std::uint32_t dataset_id = 0;
    bool operator==(const DatasetDone&) const = default;
};

struct SyncAck {
    std::uint32_t dataset_id = 0;
    Status status = Status::ok;
    bool operator==(const SyncAck&) const = default;
};

struct Command {
    std::string text;
    bool operator==(const Command&) const = default;
};

struct CommandResponse {
    Status status = Status::ok;
    std::string text;
    bool operator==(const CommandResponse&) const = default;
};

struct ErrorFrame {
    std::uint16_t code = 0;
    std::string text;
    bool operator==(const ErrorFrame&) const = default;
};

struct WriteFrame {
    std::uint64_t region_token = 0;
    std::uint32_t access_key = 0;
    std::uint64_t offset = 0;
    std::vector<std::byte> payload;
    bool operator==(const WriteFrame&) const = default;
};

struct Load {
    DatasetDescriptor descriptor;
    bool operator==(const Load&) const = default;
};

struct LoadAck {
    Status status = Status::ok;
    std::uint64_t checksum = 0;
    bool operator==(const LoadAck&) const = default;
};

using Message = std::variant<Announce, AnnounceAck, BlockReq, BlockGrant, DatasetDone, SyncAck, Command,
                             CommandResponse, ErrorFrame, WriteFrame, Load, LoadAck>;

Tag tag_of(const Message& msg) noexcept;

// Throws Error(Errc::encode) when a field exceeds its documented width.
std::vector<std::byte> encode(const Message& msg);

// Decodes exactly one complete frame. Throws DecodeError naming the offset
// of bad magic, truncation, unknown tags, bad enum values or trailing bytes.
Message decode(std::span<const std::byte> frame_bytes);

// Message-level I/O over a byte stream (staging <-> sink leg).
void write_message(ByteStream& out, const Message& msg);
Message read_message(ByteStream& in, Millis timeout);

// ceil(total_size / block_size); throws Errc::argument for block_size 0.
std::uint64_t block_count(std::uint64_t total_size, std::uint64_t block_size);
// Length of block `index`: min(block_size, total_size - index * block_size).
std::uint64_t block_length(std::uint64_t total_size, std::uint64_t block_size, std::uint64_t index);

// One-line rendering for diagnostics and logs.
std::string describe(const Message& msg);

}  // namespace staging::wire
