#include "hanguard/net_types.hpp"

#include <charconv>
#include <cstdio>

namespace hanguard {

namespace {

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

}  // namespace

MacAddress MacAddress::parse(std::string_view text) {
    MacAddress mac;
    if (text.size() != 17) throw ParseError("bad MAC address '" + std::string(text) + "'");
    for (std::size_t i = 0; i < 6; ++i) {
        const int hi = hex_value(text[i * 3]);
        const int lo = hex_value(text[i * 3 + 1]);
        if (hi < 0 || lo < 0 || (i < 5 && text[i * 3 + 2] != ':'))
            throw ParseError("bad MAC address '" + std::string(text) + "'");
        mac.bytes[i] = static_cast<std::uint8_t>(hi * 16 + lo);
    }
    return mac;
}

std::string MacAddress::to_string() const {
    char buf[18];
    std::snprintf(buf, sizeof buf, "%02X:%02X:%02X:%02X:%02X:%02X", bytes[0], bytes[1], bytes[2],
                  bytes[3], bytes[4], bytes[5]);
    return buf;
}

std::string MacAddress::compact_hex() const { return to_hex(bytes); }

Ipv4Address Ipv4Address::parse(std::string_view dotted) {
    std::uint32_t value = 0;
    const char* p = dotted.data();
    const char* end = dotted.data() + dotted.size();
    for (int octet = 0; octet < 4; ++octet) {
        unsigned part = 0;
        auto [next, ec] = std::from_chars(p, end, part);
        if (ec != std::errc{} || next == p || part > 255)
            throw ParseError("bad IPv4 address '" + std::string(dotted) + "'");
        value = (value << 8) | part;
        p = next;
        if (octet < 3) {
            if (p == end || *p != '.')
                throw ParseError("bad IPv4 address '" + std::string(dotted) + "'");
            ++p;
        }
    }
    if (p != end) throw ParseError("bad IPv4 address '" + std::string(dotted) + "'");
    return Ipv4Address{value};
}

std::string Ipv4Address::to_string() const {
    return std::to_string(value >> 24) + "." + std::to_string((value >> 16) & 0xFF) + "." +
           std::to_string((value >> 8) & 0xFF) + "." + std::to_string(value & 0xFF);
}

IpAddress IpAddress::from_v4(Ipv4Address v4) {
    IpAddress a;
    a.bytes[10] = 0xFF;
    a.bytes[11] = 0xFF;
    a.bytes[12] = static_cast<std::uint8_t>(v4.value >> 24);
    a.bytes[13] = static_cast<std::uint8_t>(v4.value >> 16);
    a.bytes[14] = static_cast<std::uint8_t>(v4.value >> 8);
    a.bytes[15] = static_cast<std::uint8_t>(v4.value);
    return a;
}

bool IpAddress::is_v4_mapped() const {
    for (int i = 0; i < 10; ++i)
        if (bytes[i] != 0) return false;
    return bytes[10] == 0xFF && bytes[11] == 0xFF;
}

std::optional<Ipv4Address> IpAddress::to_v4() const {
    if (!is_v4_mapped()) return std::nullopt;
    return Ipv4Address::from_octets(bytes[12], bytes[13], bytes[14], bytes[15]);
}

std::string IpAddress::to_string() const {
    if (auto v4 = to_v4()) return v4->to_string();
    std::string out;
    for (int i = 0; i < 16; i += 2) {
        char buf[6];
        std::snprintf(buf, sizeof buf, "%x", (bytes[i] << 8) | bytes[i + 1]);
        if (i) out += ':';
        out += buf;
    }
    return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes, bool upper) {
    static constexpr char lower_digits[] = "0123456789abcdef";
    static constexpr char upper_digits[] = "0123456789ABCDEF";
    const char* digits = upper ? upper_digits : lower_digits;
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out += digits[b >> 4];
        out += digits[b & 0xF];
    }
    return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw ParseError("odd-length hex string");
    std::vector<std::uint8_t> out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int hi = hex_value(hex[2 * i]);
        const int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) throw ParseError("non-hex character in '" + std::string(hex) + "'");
        out[i] = static_cast<std::uint8_t>(hi * 16 + lo);
    }
    return out;
}

Digest32 digest_from_hex(std::string_view hex64) {
    if (hex64.size() != 64) throw ParseError("digest must be 64 hex characters");
    auto raw = from_hex(hex64);
    Digest32 d{};
    std::copy(raw.begin(), raw.end(), d.begin());
    return d;
}

std::string_view to_string(Protocol p) { return p == Protocol::Tcp ? "tcp" : "udp"; }

std::string FlowId::to_string() const {
    return std::string(hanguard::to_string(protocol)) + " " + src_ip.to_string() + ":" +
           std::to_string(src_port) + " -> " + dst_ip.to_string() + ":" + std::to_string(dst_port);
}

FlowId make_flow(Ipv4Address src, std::uint16_t sport, Ipv4Address dst, std::uint16_t dport,
                 Protocol proto) {
    return FlowId{IpAddress::from_v4(src), sport, IpAddress::from_v4(dst), dport, proto};
}

}  // namespace hanguard

std::size_t std::hash<hanguard::FlowId>::operator()(const hanguard::FlowId& f) const noexcept {
    std::size_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint8_t b) { h = (h ^ b) * 1099511628211ull; };
    for (auto b : f.src_ip.bytes) mix(b);
    for (auto b : f.dst_ip.bytes) mix(b);
    mix(static_cast<std::uint8_t>(f.src_port >> 8));
    mix(static_cast<std::uint8_t>(f.src_port));
    mix(static_cast<std::uint8_t>(f.dst_port >> 8));
    mix(static_cast<std::uint8_t>(f.dst_port));
    mix(static_cast<std::uint8_t>(f.protocol));
    return h;
}
