#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hanguard/net_types.hpp"

// The subset of Linux /proc/net/{tcp,tcp6,udp,udp6} used to attribute flows to apps.
// Addresses are printed as 32-bit words in host (little-endian) order; ports are
// plain big-endian hex.
namespace hanguard::procfs {

enum class SocketState : std::uint8_t {
    Established = 0x01,
    SynSent = 0x02,
    SynRecv = 0x03,
    FinWait1 = 0x04,
    FinWait2 = 0x05,
    TimeWait = 0x06,
    Close = 0x07,
    CloseWait = 0x08,
    LastAck = 0x09,
    Listen = 0x0A,
    Closing = 0x0B,
};

// FIN-related and closed states.
bool is_closing(std::uint8_t state);

class LineParseError : public ParseError {
public:
    LineParseError(std::size_t column, const std::string& what)
        : ParseError("column " + std::to_string(column) + ": " + what), column_(column) {}
    std::size_t column() const { return column_; }

private:
    std::size_t column_;
};

Ipv4Address hex_to_ipv4(std::string_view hex8);
std::string ipv4_to_hex(Ipv4Address ip);

// Succeeds only for the fixed IPv4-mapped prefix 0000000000000000FFFF0000.
std::optional<Ipv4Address> mapped6_to_ipv4(std::string_view hex32);
IpAddress hex_to_ipv6(std::string_view hex32);
std::string ipv6_to_hex(const IpAddress& ip);

struct Endpoint {
    IpAddress addr;  // v4 addresses are held IPv4-mapped
    std::uint16_t port = 0;

    bool operator==(const Endpoint&) const = default;
};

struct ProcNetLine {
    int slot = 0;
    Endpoint local;
    Endpoint remote;
    std::uint8_t state = 0;
    std::uint32_t uid = 0;

    bool operator==(const ProcNetLine&) const = default;
};

ProcNetLine parse_line(std::string_view text);

enum class AddressForm { V4, Mapped6 };

std::string render_line(const FlowId& flow, std::uint32_t uid, std::uint8_t state, int slot,
                        AddressForm form);

enum class FileKind { Tcp = 0, Tcp6 = 1, Udp = 2, Udp6 = 3 };

inline constexpr std::array<FileKind, 4> kAllFiles{FileKind::Tcp, FileKind::Tcp6, FileKind::Udp,
                                                   FileKind::Udp6};

std::string_view file_name(FileKind kind);
std::string_view header_line(FileKind kind);
FileKind file_for(Protocol proto, AddressForm form);

class ProcFile {
public:
    const std::vector<std::string>& lines() const { return lines_; }
    SimTime mtime() const { return mtime_; }

    // Replaces the socket lines; mtime moves to `now` only if the content changed.
    bool set_lines(std::vector<std::string> lines, SimTime now);

    std::string text(FileKind kind) const;

private:
    std::vector<std::string> lines_;
    SimTime mtime_{0};
};

struct ProcNet {
    std::array<ProcFile, 4> files;

    ProcFile& file(FileKind k) { return files[static_cast<std::size_t>(k)]; }
    const ProcFile& file(FileKind k) const { return files[static_cast<std::size_t>(k)]; }
};

// Simulated phone kernel socket table; the single writer of a phone's ProcNet.
class SocketTable {
public:
    struct Socket {
        std::uint32_t uid = 0;
        std::uint8_t state = static_cast<std::uint8_t>(SocketState::Established);
        AddressForm form = AddressForm::Mapped6;
    };

    void open(const FlowId& flow, std::uint32_t uid, AddressForm form, SimTime now);
    void set_state(const FlowId& flow, SocketState state, SimTime now);
    void close(const FlowId& flow, SimTime now);
    bool contains(const FlowId& flow) const { return sockets_.contains(flow); }

    const ProcNet& proc() const { return proc_; }

private:
    void render(SimTime now);

    std::map<FlowId, Socket> sockets_;
    ProcNet proc_;
};

}  // namespace hanguard::procfs
