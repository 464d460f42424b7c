#include "staging/sink.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "staging/fnv1a.hpp"

namespace staging {

using namespace wire;
namespace fs = std::filesystem;

std::string_view to_string(EntryKind kind) noexcept {
    switch (kind) {
        case EntryKind::tar: return "tar";
        case EntryKind::subtar_binding: return "subtar_binding";
        case EntryKind::dataset: return "dataset";
    }
    return "unknown";
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string unquote(std::string_view s) {
    s = trim(s);
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
        s = s.substr(1, s.size() - 2);
    }
    return std::string(s);
}

struct ParsedCommand {
    std::string op;
    std::vector<std::string> args;
};

// op(arg, arg, ...). Commas inside quotes or nested brackets do not split.
std::optional<ParsedCommand> parse(std::string_view text, std::string& diagnostic) {
    text = trim(text);
    if (text.empty()) {
        diagnostic = "empty command";
        return std::nullopt;
    }
    const auto open = text.find('(');
    if (open == std::string_view::npos || text.back() != ')') {
        diagnostic = "expected <operator>(<arguments>)";
        return std::nullopt;
    }
    ParsedCommand cmd;
    cmd.op = std::string(trim(text.substr(0, open)));
    if (cmd.op.empty() || std::isdigit(static_cast<unsigned char>(cmd.op[0])) || !std::all_of(cmd.op.begin(), cmd.op.end(), [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
        })) {
        diagnostic = "bad operator name";
        return std::nullopt;
    }
    const auto body = text.substr(open + 1, text.size() - open - 2);
    int depth = 0;
    char quote = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= body.size(); ++i) {
        const char c = i < body.size() ? body[i] : ',';
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '(' || c == '[' || c == '{') {
            ++depth;
        } else if (c == ')' || c == ']' || c == '}') {
            --depth;
        } else if (c == ',' && depth == 0) {
            cmd.args.push_back(unquote(body.substr(start, i - start)));
            start = i + 1;
        }
        if (depth < 0) {
            diagnostic = "unbalanced brackets";
            return std::nullopt;
        }
    }
    if (quote || depth != 0) {
        diagnostic = "unterminated quote or bracket";
        return std::nullopt;
    }
    if (cmd.args.size() == 1 && cmd.args[0].empty()) cmd.args.clear();
    return cmd;
}

}  // namespace

AnalyticSink::AnalyticSink(SinkOptions options)
    : options_(std::move(options)), log_(options_.log), fail_remaining_(options_.fail_first) {}

std::unique_ptr<AnalyticSink> AnalyticSink::start(SinkOptions options) {
    if (options.store_dir) {
        std::error_code ec;
        if (!fs::is_directory(*options.store_dir, ec)) {
            throw Error(Errc::io, "store directory '" + options.store_dir->string() + "' does not exist");
        }
    }
    std::unique_ptr<AnalyticSink> sink(new AnalyticSink(std::move(options)));
    sink->acceptor_ = listen_stream(sink->options_.listen);
    sink->log_.event("listening", {}, sink->acceptor_->endpoint().to_string());
    sink->acceptor_thread_ = std::thread([p = sink.get()] { p->accept_loop(); });
    return sink;
}

AnalyticSink::~AnalyticSink() { shutdown(); }

Endpoint AnalyticSink::endpoint() const { return acceptor_->endpoint(); }

void AnalyticSink::shutdown() {
    if (stopping_.exchange(true)) return;
    if (acceptor_) acceptor_->close();
    if (acceptor_thread_.joinable()) acceptor_thread_.join();
    std::vector<Connection> conns;
    {
        std::lock_guard lk(conn_mu_);
        conns.swap(connections_);
    }
    for (auto& c : conns) c.stream->shutdown();
    for (auto& c : conns) {
        if (c.thread.joinable()) c.thread.join();
    }
}

void AnalyticSink::accept_loop() {
    while (!stopping_) {
        auto stream = acceptor_->accept(Millis{100});
        if (!stream) continue;
        std::shared_ptr<ByteStream> shared(std::move(stream));
        auto done = std::make_shared<std::atomic<bool>>(false);
        std::lock_guard lk(conn_mu_);
        std::erase_if(connections_, [](Connection& c) {
            if (!c.done->load()) return false;
            c.thread.join();
            return true;
        });
        connections_.push_back({std::thread([this, shared, done] {
                                    serve(shared);
                                    *done = true;
                                }),
                                done, shared});
    }
}

void AnalyticSink::serve(std::shared_ptr<ByteStream> stream) {
    while (!stopping_) {
        Message msg;
        try {
            msg = read_message(*stream, options_.io_timeout);
        } catch (const DecodeError& e) {
            log_.event("bad_frame", {}, e.what());
            try {
                write_message(*stream, ErrorFrame{static_cast<std::uint16_t>(Status::protocol_violation), e.what()});
            } catch (const Error&) {
            }
            break;
        } catch (const Error&) {
            break;  // peer closed or went quiet
        }
        try {
            if (const auto* load = std::get_if<Load>(&msg)) {
                write_message(*stream, handle_load(*stream, *load));
            } else if (const auto* cmd = std::get_if<Command>(&msg)) {
                write_message(*stream, handle_command(cmd->text));
            } else {
                write_message(*stream, ErrorFrame{static_cast<std::uint16_t>(Status::protocol_violation),
                                                  "sink accepts LOAD and CMD only"});
            }
        } catch (const Error&) {
            break;
        }
    }
    stream->shutdown();
}

void AnalyticSink::record(SinkEvent::Kind kind, std::string subject, Status status) {
    std::lock_guard lk(mu_);
    events_.push_back({kind, std::move(subject), status, next_event_++, std::chrono::steady_clock::now()});
}

fs::path AnalyticSink::file_for(const std::string& name) const {
    std::string safe;
    for (unsigned char c : name) safe += std::isalnum(c) || c == '-' || c == '_' || c == '.' ? char(c) : '_';
    return *options_.store_dir / (safe + "-" + std::to_string(fnv1a(std::as_bytes(std::span(name)))) + ".bin");
}

LoadAck AnalyticSink::handle_load(ByteStream& in, const Load& load) {
    const auto& desc = load.descriptor;
    record(SinkEvent::Kind::load_begin, desc.name, Status::ok);

    std::vector<std::byte> memory;
    std::ofstream file;
    fs::path temp;
    if (options_.store_dir) {
        temp = *options_.store_dir / (".incoming-" + std::to_string(++temp_serial_));
        file.open(temp, std::ios::binary | std::ios::trunc);
    } else {
        memory.resize(desc.total_size);
    }

    // Single pass: hash and persist as the bytes arrive.
    Fnv1a hash;
    bool truncated = false;
    std::vector<std::byte> chunk(options_.store_dir ? std::min<std::uint64_t>(desc.total_size, 1 << 20) : 0);
    for (std::uint64_t off = 0; off < desc.total_size;) {
        const auto n = std::min<std::uint64_t>(desc.total_size - off, 1 << 20);
        std::span<std::byte> dst = options_.store_dir ? std::span(chunk).first(n) : std::span(memory).subspan(off, n);
        try {
            in.read_exact(dst, options_.io_timeout);
        } catch (const Error&) {
            truncated = true;
            break;
        }
        hash.update(dst);
        if (file.is_open()) file.write(reinterpret_cast<const char*>(dst.data()), static_cast<std::streamsize>(n));
        off += n;
    }
    if (file.is_open()) file.close();

    LoadAck ack{Status::ok, hash.digest()};
    bool scripted_failure = false;
    {
        std::lock_guard lk(mu_);
        if (fail_remaining_ > 0) {
            --fail_remaining_;
            scripted_failure = true;
        }
    }
    if (truncated) {
        ack.status = Status::internal;
    } else if (scripted_failure) {
        ack.status = Status::internal;
    } else if (ack.checksum != desc.checksum) {
        ack.status = Status::checksum_mismatch;
    }

    if (ack.status != Status::ok) {
        if (!temp.empty()) {
            std::error_code ec;
            fs::remove(temp, ec);
        }
        {
            std::lock_guard lk(mu_);
            ++rejected_;
        }
        log_.event("load_rejected", desc.name,
                   truncated ? "truncated payload" : scripted_failure ? "scripted failure" : "checksum mismatch");
    } else {
        std::lock_guard lk(mu_);
        if (datasets_.contains(desc.name)) log_.event("load_overwrite", desc.name, "replacing earlier payload");
        if (options_.store_dir) {
            std::error_code ec;
            fs::rename(temp, file_for(desc.name), ec);
            if (ec) ack.status = Status::internal;
        } else {
            payloads_[desc.name] = std::move(memory);
        }
        if (ack.status == Status::ok) {
            datasets_[desc.name] = {EntryKind::dataset, desc.name, desc.element_type, desc.total_size, ack.checksum};
        }
    }
    if (ack.status == Status::ok) log_.event("loaded", desc.name, "size=" + std::to_string(desc.total_size));
    record(SinkEvent::Kind::load_ack, desc.name, ack.status);
    if (truncated) throw Error(Errc::closed, "LOAD payload truncated");
    return ack;
}

CommandResponse AnalyticSink::handle_command(std::string_view text) {
    record(SinkEvent::Kind::command, std::string(text), Status::ok);
    std::string diagnostic;
    auto cmd = parse(text, diagnostic);
    CommandResponse resp;
    if (!cmd) {
        resp = {Status::protocol_violation, "parse error: " + diagnostic};
    } else if (cmd->op == "create_tar") {
        if (cmd->args.empty() || cmd->args[0].empty()) {
            resp = {Status::protocol_violation, "parse error: create_tar needs a name"};
        } else {
            std::lock_guard lk(mu_);
            const auto& name = cmd->args[0];
            if (tars_.contains(name)) {
                resp = {Status::duplicate_name, "tar '" + name + "' exists"};
            } else {
                tars_[name] = {EntryKind::tar, name, std::string(text), 0, 0};
                resp = {Status::ok, "created tar " + name};
            }
        }
    } else if (cmd->op == "load_subtar") {
        if (cmd->args.size() < 2 || cmd->args[0].empty() || cmd->args[1].empty()) {
            resp = {Status::protocol_violation, "parse error: load_subtar needs a tar and a dataset"};
        } else {
            std::lock_guard lk(mu_);
            const auto& tar = cmd->args[0];
            const auto& ds = cmd->args[1];
            if (!tars_.contains(tar)) {
                resp = {Status::internal, "unknown tar '" + tar + "'"};
            } else if (!datasets_.contains(ds)) {
                resp = {Status::internal, "unknown dataset '" + ds + "'"};
            } else {
                const auto key = tar + "/" + ds;
                bindings_[key] = {EntryKind::subtar_binding, key, std::string(text), datasets_[ds].size,
                                  datasets_[ds].checksum};
                resp = {Status::ok, "bound " + ds + " to " + tar};
            }
        }
    } else {
        resp = {Status::protocol_violation, "parse error: unknown operator '" + cmd->op + "'"};
    }
    log_.event("command", {}, std::string(text) + " -> " + std::string(to_string(resp.status)));
    return resp;
}

std::vector<CatalogEntry> AnalyticSink::inspect() const {
    std::lock_guard lk(mu_);
    std::vector<CatalogEntry> out;
    for (const auto* m : {&tars_, &bindings_, &datasets_}) {
        for (const auto& [_, e] : *m) out.push_back(e);
    }
    return out;
}

std::vector<std::byte> AnalyticSink::fetch(const std::string& name) const {
    std::lock_guard lk(mu_);
    if (!datasets_.contains(name)) throw Error(Errc::not_found, "no dataset '" + name + "'");
    if (!options_.store_dir) return payloads_.at(name);
    const auto path = file_for(name);
    std::ifstream in(path, std::ios::binary);
    std::vector<std::byte> out(datasets_.at(name).size);
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!in && !out.empty()) throw Error(Errc::io, "cannot read " + path.string());
    return out;
}

std::size_t AnalyticSink::dataset_count() const {
    std::lock_guard lk(mu_);
    return datasets_.size();
}

void AnalyticSink::remove_dataset(const std::string& name) {
    std::lock_guard lk(mu_);
    if (datasets_.erase(name) == 0) return;
    payloads_.erase(name);
    if (options_.store_dir) {
        std::error_code ec;
        fs::remove(file_for(name), ec);
    }
    // Keep referential integrity: bindings never point at a missing dataset.
    std::erase_if(bindings_, [&](const auto& kv) { return kv.first.ends_with("/" + name); });
}

std::vector<SinkEvent> AnalyticSink::events() const {
    std::lock_guard lk(mu_);
    return events_;
}

std::vector<std::string> AnalyticSink::load_order() const {
    std::lock_guard lk(mu_);
    std::vector<std::string> out;
    for (const auto& e : events_) {
        if (e.kind == SinkEvent::Kind::load_begin) out.push_back(e.subject);
    }
    return out;
}

std::uint64_t AnalyticSink::loads_rejected() const {
    std::lock_guard lk(mu_);
    return rejected_;
}

void AnalyticSink::set_fail_first(std::uint32_t n) {
    std::lock_guard lk(mu_);
    fail_remaining_ = n;
}

}  // namespace staging
