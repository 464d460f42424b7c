#include "staging/wire.hpp"

#include <sstream>

namespace staging::wire {

std::string_view to_string(Tag tag) noexcept {
    switch (tag) {
        case Tag::announce: return "ANNOUNCE";
        case Tag::announce_ack: return "ANNOUNCE_ACK";
        case Tag::block_req: return "BLOCK_REQ";
        case Tag::block_grant: return "BLOCK_GRANT";
        case Tag::dataset_done: return "DATASET_DONE";
        case Tag::sync_ack: return "SYNC_ACK";
        case Tag::cmd: return "CMD";
        case Tag::cmd_resp: return "CMD_RESP";
        case Tag::error: return "ERROR";
        case Tag::write_frame: return "WRITE_FRAME";
        case Tag::load: return "LOAD";
        case Tag::load_ack: return "LOAD_ACK";
    }
    return "UNKNOWN";
}

std::string_view to_string(Status status) noexcept {
    switch (status) {
        case Status::ok: return "ok";
        case Status::capacity: return "capacity";
        case Status::duplicate_name: return "duplicate_name";
        case Status::protocol_violation: return "protocol_violation";
        case Status::checksum_mismatch: return "checksum_mismatch";
        case Status::internal: return "internal";
    }
    return "unknown";
}

Tag tag_of(const Message& msg) noexcept {
    static constexpr Tag kTags[] = {Tag::announce, Tag::announce_ack, Tag::block_req, Tag::block_grant,
                                    Tag::dataset_done, Tag::sync_ack, Tag::cmd, Tag::cmd_resp,
                                    Tag::error, Tag::write_frame, Tag::load, Tag::load_ack};
    return kTags[msg.index()];
}

namespace {

void short_text(frame::Writer& w, std::string_view s, std::size_t limit, const char* field) {
    if (s.size() > limit) {
        throw Error(Errc::encode, std::string(field) + " is " + std::to_string(s.size()) + " bytes, limit " +
                                      std::to_string(limit));
    }
    w.u8(static_cast<std::uint8_t>(s.size()));
    w.text(s);
}

void long_text(frame::Writer& w, std::string_view s, const char* field) {
    if (s.size() > kMaxTextLength) {
        throw Error(Errc::encode, std::string(field) + " is " + std::to_string(s.size()) + " bytes, limit " +
                                      std::to_string(kMaxTextLength));
    }
    w.text(s);
}

void put_descriptor(frame::Writer& w, const DatasetDescriptor& d) {
    short_text(w, d.name, kMaxNameLength, "dataset name");
    short_text(w, d.element_type, kMaxTypeLength, "element type");
    w.u64(d.total_size);
    w.u64(d.checksum);
}

void encode_body(frame::Writer& w, const Message& msg) {
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Announce>) {
                put_descriptor(w, m.descriptor);
                w.u64(m.block_size);
            } else if constexpr (std::is_same_v<T, AnnounceAck>) {
                w.u8(static_cast<std::uint8_t>(m.status));
                w.u32(m.dataset_id);
            } else if constexpr (std::is_same_v<T, BlockReq>) {
                w.u32(m.dataset_id);
                w.u32(m.block_index);
            } else if constexpr (std::is_same_v<T, BlockGrant>) {
                w.u32(m.dataset_id);
                w.u32(m.block_index);
                w.u64(m.region_token);
                w.u32(m.access_key);
                w.u64(m.region_length);
            } else if constexpr (std::is_same_v<T, DatasetDone>) {
                w.u32(m.dataset_id);
            } else if constexpr (std::is_same_v<T, SyncAck>) {
                w.u32(m.dataset_id);
                w.u8(static_cast<std::uint8_t>(m.status));
            } else if constexpr (std::is_same_v<T, Command>) {
                long_text(w, m.text, "command");
            } else if constexpr (std::is_same_v<T, CommandResponse>) {
                w.u8(static_cast<std::uint8_t>(m.status));
                long_text(w, m.text, "response");
            } else if constexpr (std::is_same_v<T, ErrorFrame>) {
                w.u16(m.code);
                long_text(w, m.text, "error text");
            } else if constexpr (std::is_same_v<T, WriteFrame>) {
                if (m.payload.size() > frame::kMaxMessage) throw Error(Errc::encode, "write payload too large");
                w.u64(m.region_token);
                w.u32(m.access_key);
                w.u64(m.offset);
                w.bytes(m.payload);
            } else if constexpr (std::is_same_v<T, Load>) {
                put_descriptor(w, m.descriptor);
            } else if constexpr (std::is_same_v<T, LoadAck>) {
                w.u8(static_cast<std::uint8_t>(m.status));
                w.u64(m.checksum);
            }
        },
        msg);
}

Status get_status(frame::Reader& r) {
    const auto at = r.offset();
    const auto v = r.u8();
    if (v > static_cast<std::uint8_t>(Status::internal)) {
        throw DecodeError(at, "invalid status " + std::to_string(v));
    }
    return static_cast<Status>(v);
}

std::string get_short_text(frame::Reader& r, std::size_t limit, const char* field) {
    const auto at = r.offset();
    const auto n = r.u8();
    if (n > limit) throw DecodeError(at, std::string(field) + " length " + std::to_string(n) + " exceeds limit");
    return r.text(n);
}

DatasetDescriptor get_descriptor(frame::Reader& r) {
    DatasetDescriptor d;
    d.name = get_short_text(r, kMaxNameLength, "name");
    d.element_type = get_short_text(r, kMaxTypeLength, "element type");
    d.total_size = r.u64();
    d.checksum = r.u64();
    return d;
}

std::string get_long_text(frame::Reader& r) {
    const auto at = r.offset();
    if (r.remaining() > kMaxTextLength) throw DecodeError(at, "text exceeds limit");
    return r.text(r.remaining());
}

Message decode_body(Tag tag, frame::Reader& r) {
    switch (tag) {
        case Tag::announce: {
            Announce m;
            m.descriptor = get_descriptor(r);
            m.block_size = r.u64();
            return m;
        }
        case Tag::announce_ack: {
            AnnounceAck m;
            m.status = get_status(r);
            m.dataset_id = r.u32();
            return m;
        }
        case Tag::block_req: {
            BlockReq m;
            m.dataset_id = r.u32();
            m.block_index = r.u32();
            return m;
        }
        case Tag::block_grant: {
            BlockGrant m;
            m.dataset_id = r.u32();
            m.block_index = r.u32();
            m.region_token = r.u64();
            m.access_key = r.u32();
            m.region_length = r.u64();
            return m;
        }
        case Tag::dataset_done: return DatasetDone{r.u32()};
        case Tag::sync_ack: {
            SyncAck m;
            m.dataset_id = r.u32();
            m.status = get_status(r);
            return m;
        }
        case Tag::cmd: return Command{get_long_text(r)};
        case Tag::cmd_resp: {
            CommandResponse m;
            m.status = get_status(r);
            m.text = get_long_text(r);
            return m;
        }
        case Tag::error: {
            ErrorFrame m;
            m.code = r.u16();
            m.text = get_long_text(r);
            return m;
        }
        case Tag::write_frame: {
            WriteFrame m;
            m.region_token = r.u64();
            m.access_key = r.u32();
            m.offset = r.u64();
            auto rest = r.rest();
            m.payload.assign(rest.begin(), rest.end());
            return m;
        }
        case Tag::load: return Load{get_descriptor(r)};
        case Tag::load_ack: {
            LoadAck m;
            m.status = get_status(r);
            m.checksum = r.u64();
            return m;
        }
    }
    throw DecodeError(4, "unknown tag");
}

bool known_tag(std::uint8_t t) {
    switch (t) {
        case 0x01: case 0x02: case 0x03: case 0x04: case 0x05: case 0x06:
        case 0x07: case 0x08: case 0x09: case 0x10: case 0x20: case 0x21:
            return true;
        default:
            return false;
    }
}

}  // namespace

std::vector<std::byte> encode(const Message& msg) {
    std::vector<std::byte> body;
    frame::Writer w(body);
    encode_body(w, msg);
    auto header = frame::encode_header(static_cast<std::uint8_t>(tag_of(msg)), body.size());
    std::vector<std::byte> out;
    out.reserve(header.size() + body.size());
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

Message decode(std::span<const std::byte> bytes) {
    const auto header = frame::parse_header(bytes);
    if (!known_tag(header.tag)) throw DecodeError(4, "unknown tag " + std::to_string(header.tag));
    const auto body = bytes.subspan(frame::kHeaderSize);
    if (header.body_length > body.size()) throw DecodeError(bytes.size(), "truncated frame");
    if (header.body_length < body.size()) throw DecodeError(frame::kHeaderSize + header.body_length, "trailing bytes");
    frame::Reader r(body, frame::kHeaderSize);
    auto msg = decode_body(static_cast<Tag>(header.tag), r);
    if (r.remaining() != 0) throw DecodeError(r.offset(), "trailing bytes in body");
    return msg;
}

void write_message(ByteStream& out, const Message& msg) { out.write_all(encode(msg)); }

Message read_message(ByteStream& in, Millis timeout) {
    frame::HeaderBytes raw{};
    in.read_exact(raw, timeout);
    const auto header = frame::parse_header(raw);
    if (!known_tag(header.tag)) throw DecodeError(4, "unknown tag");
    if (header.body_length > std::max<std::uint64_t>(kMaxTextLength * 2, 1024) &&
        header.tag != static_cast<std::uint8_t>(Tag::write_frame)) {
        throw DecodeError(5, "implausible body length " + std::to_string(header.body_length));
    }
    std::vector<std::byte> buf(frame::kHeaderSize + header.body_length);
    std::copy(raw.begin(), raw.end(), buf.begin());
    in.read_exact(std::span(buf).subspan(frame::kHeaderSize), timeout);
    return decode(buf);
}

std::uint64_t block_count(std::uint64_t total_size, std::uint64_t block_size) {
    if (block_size == 0) throw Error(Errc::argument, "block size must be positive");
    return total_size / block_size + (total_size % block_size != 0 ? 1 : 0);
}

std::uint64_t block_length(std::uint64_t total_size, std::uint64_t block_size, std::uint64_t index) {
    const auto start = index * block_size;
    if (start >= total_size) return 0;
    return std::min(block_size, total_size - start);
}

std::string describe(const Message& msg) {
    std::ostringstream os;
    os << to_string(tag_of(msg));
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Announce>) {
                os << "{" << m.descriptor.name << ", size=" << m.descriptor.total_size << ", block=" << m.block_size
                   << "}";
            } else if constexpr (std::is_same_v<T, AnnounceAck>) {
                os << "{" << to_string(m.status) << ", id=" << m.dataset_id << "}";
            } else if constexpr (std::is_same_v<T, BlockReq>) {
                os << "{id=" << m.dataset_id << ", block=" << m.block_index << "}";
            } else if constexpr (std::is_same_v<T, BlockGrant>) {
                os << "{id=" << m.dataset_id << ", block=" << m.block_index << ", token=" << m.region_token
                   << ", len=" << m.region_length << "}";
            } else if constexpr (std::is_same_v<T, DatasetDone>) {
                os << "{id=" << m.dataset_id << "}";
            } else if constexpr (std::is_same_v<T, SyncAck>) {
                os << "{id=" << m.dataset_id << ", " << to_string(m.status) << "}";
            } else if constexpr (std::is_same_v<T, Command>) {
                os << "{" << m.text << "}";
            } else if constexpr (std::is_same_v<T, CommandResponse>) {
                os << "{" << to_string(m.status) << ", " << m.text << "}";
            } else if constexpr (std::is_same_v<T, ErrorFrame>) {
                os << "{code=" << m.code << ", " << m.text << "}";
            } else if constexpr (std::is_same_v<T, WriteFrame>) {
                os << "{token=" << m.region_token << ", offset=" << m.offset << ", len=" << m.payload.size() << "}";
            } else if constexpr (std::is_same_v<T, Load>) {
                os << "{" << m.descriptor.name << ", size=" << m.descriptor.total_size << "}";
            } else if constexpr (std::is_same_v<T, LoadAck>) {
                os << "{" << to_string(m.status) << "}";
            }
        },
        msg);
    return os.str();
}

}  // namespace staging::wire
