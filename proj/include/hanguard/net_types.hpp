#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hanguard {

// Virtual time on the simulation clock, 1 µs resolution.
using SimTime = std::chrono::microseconds;

constexpr SimTime from_ms(std::int64_t ms) { return std::chrono::milliseconds(ms); }

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ── Hardware / network addresses ─────────────────────────────────────────────

struct MacAddress {
    std::array<std::uint8_t, 6> bytes{};

    static MacAddress parse(std::string_view text);  // "AA:BB:CC:DD:EE:01"
    std::string to_string() const;
    std::string compact_hex() const;                 // "aabbccddee01"

    friend auto operator<=>(const MacAddress&, const MacAddress&) = default;
};

struct Ipv4Address {
    std::uint32_t value = 0;  // host order, 192.168.1.1 == 0xC0A80101

    static Ipv4Address parse(std::string_view dotted);
    static constexpr Ipv4Address from_octets(std::uint8_t a, std::uint8_t b, std::uint8_t c,
                                             std::uint8_t d) {
        return Ipv4Address{(std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) |
                           (std::uint32_t{c} << 8) | std::uint32_t{d}};
    }
    std::string to_string() const;

    friend auto operator<=>(const Ipv4Address&, const Ipv4Address&) = default;
};

// 16-byte address in network order. IPv4 is always carried IPv4-mapped (::ffff:a.b.c.d).
struct IpAddress {
    std::array<std::uint8_t, 16> bytes{};

    static IpAddress from_v4(Ipv4Address v4);
    bool is_v4_mapped() const;
    std::optional<Ipv4Address> to_v4() const;
    std::string to_string() const;

    friend auto operator<=>(const IpAddress&, const IpAddress&) = default;
};

// ── Digests ──────────────────────────────────────────────────────────────────

using Digest32 = std::array<std::uint8_t, 32>;

std::string to_hex(std::span<const std::uint8_t> bytes, bool upper = false);
std::vector<std::uint8_t> from_hex(std::string_view hex);
Digest32 digest_from_hex(std::string_view hex64);

// ── Flows ────────────────────────────────────────────────────────────────────

enum class Protocol : std::uint8_t { Tcp = 6, Udp = 17 };

std::string_view to_string(Protocol p);

struct FlowId {
    IpAddress src_ip;
    std::uint16_t src_port = 0;
    IpAddress dst_ip;
    std::uint16_t dst_port = 0;
    Protocol protocol = Protocol::Tcp;

    std::string to_string() const;

    friend auto operator<=>(const FlowId&, const FlowId&) = default;
};

FlowId make_flow(Ipv4Address src, std::uint16_t sport, Ipv4Address dst, std::uint16_t dport,
                 Protocol proto);

// A data-plane packet as seen by the enforcing point. Payload is not modeled.
struct Packet {
    MacAddress src_mac;
    MacAddress dst_mac;
    FlowId flow;
    bool fin = false;
    std::uint32_t size = 1;
};

}  // namespace hanguard

template <>
struct std::hash<hanguard::FlowId> {
    std::size_t operator()(const hanguard::FlowId& f) const noexcept;
};
