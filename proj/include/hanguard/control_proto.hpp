#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hanguard/net_types.hpp"
#include "hanguard/policy.hpp"

// Control-channel messages between Monitors and the router.
//
// Frame layout (all integers big-endian):
//
//   u32 payload_length
//   payload:
//     u8   msg_type
//     [32] credential_hash
//     [6]  phone_mac
//     [16] src_ip        u16 src_port
//     [16] dst_ip        u16 dst_port
//     u8   protocol
//     u8   app_id_len    [app_id_len] app_id
//     [32] app_sig
//     u64  policy_version
//     u8   flag
//     -- PolicyUpdate / PolicyPush only --
//     u32  body_len      [body_len] body (update delta / policy text)
namespace hanguard::proto {

enum class MessageType : std::uint8_t {
    FlowDecision = 1,
    PolicyUpdate = 2,
    PolicyPush = 3,
    Ack = 4,
    VersionQuery = 5,
};

enum class Flag : std::uint8_t { Invalidate = 0, Validate = 1 };

struct ControlMessage {
    MessageType msg_type = MessageType::FlowDecision;
    Digest32 credential_hash{};
    MacAddress phone_mac;
    FlowId flow;
    std::string app_id;
    Digest32 app_sig{};
    std::uint64_t policy_version = 0;
    Flag flag = Flag::Validate;
    std::string body;

    bool operator==(const ControlMessage&) const = default;
};

inline constexpr std::size_t kFrameHeaderSize = 4;
inline constexpr std::size_t kMaxAppIdLength = 255;
// Payload bytes excluding the app_id characters themselves.
inline constexpr std::size_t kFixedPayloadSize = 1 + 32 + 6 + 16 + 2 + 16 + 2 + 1 + 1 + 32 + 8 + 1;

bool carries_body(MessageType t);

class EncodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode(const ControlMessage& msg);

struct Malformed {
    std::size_t offset;  // byte offset into the frame where decoding failed
    std::string reason;
};

using DecodeResult = std::variant<ControlMessage, Malformed>;

DecodeResult decode(std::span<const std::uint8_t> frame);

enum class AuthResult { Ok, UnknownPhone, BadCredentials, CertMismatch, StaleVersion };

std::string_view to_string(AuthResult r);

// Checks in order: registered MAC, credential hash, channel certificate, policy version.
AuthResult authenticate(const ControlMessage& msg, std::string_view channel_cert,
                        const policy::Policy& policy);

// Same as authenticate() without the version check, for sync traffic that by nature
// originates from an out-of-date replica (VersionQuery, policy pull).
AuthResult authenticate_identity(const ControlMessage& msg, std::string_view channel_cert,
                                 const policy::Policy& policy);

}  // namespace hanguard::proto
