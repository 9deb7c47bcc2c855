#include "hanguard/procfs.hpp"

#include <charconv>
#include <cstdio>

namespace hanguard::procfs {

bool is_closing(std::uint8_t state) {
    switch (static_cast<SocketState>(state)) {
        case SocketState::FinWait1:
        case SocketState::FinWait2:
        case SocketState::TimeWait:
        case SocketState::Close:
        case SocketState::CloseWait:
        case SocketState::LastAck:
        case SocketState::Closing:
            return true;
        default:
            return false;
    }
}

namespace {

constexpr std::string_view kMappedPrefix = "0000000000000000FFFF0000";

bool is_hex(std::string_view s) {
    for (char c : s)
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F')))
            return false;
    return true;
}

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c; };
        if (lower(a[i]) != lower(b[i])) return false;
    }
    return true;
}

std::uint32_t parse_hex_u32(std::string_view s) {
    std::uint32_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ParseError("bad hex '" + std::string(s) + "'");
    return v;
}

// One 32-bit word as printed by the kernel: the in-memory (network-order) bytes read as a
// little-endian integer.
void word_to_bytes(std::string_view hex8, std::uint8_t* out) {
    const auto v = parse_hex_u32(hex8);
    out[0] = static_cast<std::uint8_t>(v);
    out[1] = static_cast<std::uint8_t>(v >> 8);
    out[2] = static_cast<std::uint8_t>(v >> 16);
    out[3] = static_cast<std::uint8_t>(v >> 24);
}

std::string bytes_to_word(const std::uint8_t* in) {
    const std::uint32_t v = std::uint32_t{in[0]} | (std::uint32_t{in[1]} << 8) |
                            (std::uint32_t{in[2]} << 16) | (std::uint32_t{in[3]} << 24);
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08X", v);
    return buf;
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r' || s[i] == '\n')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r' && s[j] != '\n') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

Endpoint parse_endpoint(std::string_view token, std::size_t column) {
    const auto colon = token.find(':');
    if (colon == std::string_view::npos) throw LineParseError(column, "missing ':' in address");
    const auto addr = token.substr(0, colon);
    const auto port = token.substr(colon + 1);
    if (port.size() != 4 || !is_hex(port)) throw LineParseError(column, "port must be 4 hex digits");
    if (!is_hex(addr)) throw LineParseError(column, "address is not hex");
    Endpoint ep;
    if (addr.size() == 8)
        ep.addr = IpAddress::from_v4(hex_to_ipv4(addr));
    else if (addr.size() == 32)
        ep.addr = hex_to_ipv6(addr);
    else
        throw LineParseError(column, "address must be 8 or 32 hex digits");
    ep.port = static_cast<std::uint16_t>(parse_hex_u32(port));
    return ep;
}

}  // namespace

Ipv4Address hex_to_ipv4(std::string_view hex8) {
    if (hex8.size() != 8 || !is_hex(hex8))
        throw ParseError("expected 8 hex digits, got '" + std::string(hex8) + "'");
    std::uint8_t b[4];
    word_to_bytes(hex8, b);
    return Ipv4Address::from_octets(b[0], b[1], b[2], b[3]);
}

std::string ipv4_to_hex(Ipv4Address ip) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(ip.value >> 24),
                               static_cast<std::uint8_t>(ip.value >> 16),
                               static_cast<std::uint8_t>(ip.value >> 8),
                               static_cast<std::uint8_t>(ip.value)};
    return bytes_to_word(b);
}

std::optional<Ipv4Address> mapped6_to_ipv4(std::string_view hex32) {
    if (hex32.size() != 32 || !is_hex(hex32))
        throw ParseError("expected 32 hex digits, got '" + std::string(hex32) + "'");
    if (!iequals(hex32.substr(0, kMappedPrefix.size()), kMappedPrefix)) return std::nullopt;
    return hex_to_ipv4(hex32.substr(24));
}

IpAddress hex_to_ipv6(std::string_view hex32) {
    if (hex32.size() != 32 || !is_hex(hex32))
        throw ParseError("expected 32 hex digits, got '" + std::string(hex32) + "'");
    IpAddress a;
    for (std::size_t w = 0; w < 4; ++w) word_to_bytes(hex32.substr(w * 8, 8), a.bytes.data() + w * 4);
    return a;
}

std::string ipv6_to_hex(const IpAddress& ip) {
    std::string out;
    for (std::size_t w = 0; w < 4; ++w) out += bytes_to_word(ip.bytes.data() + w * 4);
    return out;
}

ProcNetLine parse_line(std::string_view text) {
    const auto cols = split_ws(text);
    if (cols.size() < 8)
        throw LineParseError(cols.size(), "expected at least 8 columns, got " + std::to_string(cols.size()));

    ProcNetLine line;
    auto slot = cols[0];
    if (slot.size() < 2 || slot.back() != ':') throw LineParseError(0, "slot must end with ':'");
    slot.remove_suffix(1);
    if (auto [p, ec] = std::from_chars(slot.data(), slot.data() + slot.size(), line.slot);
        ec != std::errc{} || p != slot.data() + slot.size())
        throw LineParseError(0, "bad slot number");

    line.local = parse_endpoint(cols[1], 1);
    line.remote = parse_endpoint(cols[2], 2);
    if (cols[3].size() != 2 || !is_hex(cols[3])) throw LineParseError(3, "state must be 2 hex digits");
    line.state = static_cast<std::uint8_t>(parse_hex_u32(cols[3]));
    if (auto [p, ec] = std::from_chars(cols[7].data(), cols[7].data() + cols[7].size(), line.uid);
        ec != std::errc{} || p != cols[7].data() + cols[7].size())
        throw LineParseError(7, "bad uid");
    return line;
}

std::string render_line(const FlowId& flow, std::uint32_t uid, std::uint8_t state, int slot,
                        AddressForm form) {
    auto addr = [form](const IpAddress& ip) {
        if (form == AddressForm::V4) {
            auto v4 = ip.to_v4();
            if (!v4) throw std::invalid_argument("v4 rendering of a native IPv6 address");
            return ipv4_to_hex(*v4);
        }
        return ipv6_to_hex(ip);
    };
    const auto local = addr(flow.src_ip);
    const auto remote = addr(flow.dst_ip);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%4d: %s:%04X %s:%04X %02X 00000000:00000000 00:00000000 00000000 %5u        0 %d "
                  "1 0000000000000000 100 0 0 10 0",
                  slot, local.c_str(), flow.src_port, remote.c_str(), flow.dst_port, state, uid,
                  10000 + slot);
    return buf;
}

std::string_view file_name(FileKind kind) {
    switch (kind) {
        case FileKind::Tcp: return "tcp";
        case FileKind::Tcp6: return "tcp6";
        case FileKind::Udp: return "udp";
        case FileKind::Udp6: return "udp6";
    }
    return "?";
}

std::string_view header_line(FileKind kind) {
    switch (kind) {
        case FileKind::Tcp:
        case FileKind::Udp:
            return "  sl  local_address rem_address   st tx_queue rx_queue tr tm->when retrnsmt   uid  "
                   "timeout inode";
        case FileKind::Tcp6:
        case FileKind::Udp6:
            return "  sl  local_address                         remote_address                        "
                   "st tx_queue rx_queue tr tm->when retrnsmt   uid  timeout inode";
    }
    return "";
}

FileKind file_for(Protocol proto, AddressForm form) {
    if (proto == Protocol::Tcp) return form == AddressForm::V4 ? FileKind::Tcp : FileKind::Tcp6;
    return form == AddressForm::V4 ? FileKind::Udp : FileKind::Udp6;
}

bool ProcFile::set_lines(std::vector<std::string> lines, SimTime now) {
    if (lines == lines_) return false;
    lines_ = std::move(lines);
    mtime_ = now;
    return true;
}

std::string ProcFile::text(FileKind kind) const {
    std::string out(header_line(kind));
    out += '\n';
    for (const auto& l : lines_) out += l + '\n';
    return out;
}

void SocketTable::open(const FlowId& flow, std::uint32_t uid, AddressForm form, SimTime now) {
    sockets_[flow] = Socket{uid, static_cast<std::uint8_t>(SocketState::Established), form};
    render(now);
}

void SocketTable::set_state(const FlowId& flow, SocketState state, SimTime now) {
    auto it = sockets_.find(flow);
    if (it == sockets_.end()) return;
    it->second.state = static_cast<std::uint8_t>(state);
    render(now);
}

void SocketTable::close(const FlowId& flow, SimTime now) {
    if (sockets_.erase(flow)) render(now);
}

void SocketTable::render(SimTime now) {
    std::array<std::vector<std::string>, 4> lines;
    for (const auto& [flow, sock] : sockets_) {
        auto& bucket = lines[static_cast<std::size_t>(file_for(flow.protocol, sock.form))];
        bucket.push_back(render_line(flow, sock.uid, sock.state, static_cast<int>(bucket.size()), sock.form));
    }
    for (auto kind : kAllFiles)
        proc_.file(kind).set_lines(std::move(lines[static_cast<std::size_t>(kind)]), now);
}

}  // namespace hanguard::procfs
