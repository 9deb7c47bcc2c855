#include "hanguard/control_proto.hpp"

#include <algorithm>

namespace hanguard::proto {

bool carries_body(MessageType t) {
    return t == MessageType::PolicyUpdate || t == MessageType::PolicyPush;
}

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v >> 8));
        u8(static_cast<std::uint8_t>(v));
    }
    void u32(std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) u8(static_cast<std::uint8_t>(v >> s));
    }
    void u64(std::uint64_t v) {
        for (int s = 56; s >= 0; s -= 8) u8(static_cast<std::uint8_t>(v >> s));
    }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void text(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

struct DecodeFailure {
    Malformed error;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return in_.size() - pos_; }

    void need(std::size_t n, const char* field) const {
        if (remaining() < n) throw DecodeFailure{{pos_, std::string("truncated at ") + field}};
    }
    std::uint8_t u8(const char* field) {
        need(1, field);
        return in_[pos_++];
    }
    std::uint16_t u16(const char* field) {
        need(2, field);
        std::uint16_t v = static_cast<std::uint16_t>((in_[pos_] << 8) | in_[pos_ + 1]);
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* field) {
        need(4, field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | in_[pos_++];
        return v;
    }
    std::uint64_t u64(const char* field) {
        need(8, field);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | in_[pos_++];
        return v;
    }
    template <std::size_t N>
    void fill(std::array<std::uint8_t, N>& dst, const char* field) {
        need(N, field);
        std::copy_n(in_.begin() + static_cast<std::ptrdiff_t>(pos_), N, dst.begin());
        pos_ += N;
    }
    std::string text(std::size_t n, const char* field) {
        need(n, field);
        std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode(const ControlMessage& msg) {
    if (msg.app_id.size() > kMaxAppIdLength)
        throw EncodeError("app_id is " + std::to_string(msg.app_id.size()) + " bytes (max 255)");
    if (!carries_body(msg.msg_type) && !msg.body.empty())
        throw EncodeError("message type carries no body");

    Writer w;
    w.u32(0);  // patched below
    w.u8(static_cast<std::uint8_t>(msg.msg_type));
    w.bytes(msg.credential_hash);
    w.bytes(msg.phone_mac.bytes);
    w.bytes(msg.flow.src_ip.bytes);
    w.u16(msg.flow.src_port);
    w.bytes(msg.flow.dst_ip.bytes);
    w.u16(msg.flow.dst_port);
    w.u8(static_cast<std::uint8_t>(msg.flow.protocol));
    w.u8(static_cast<std::uint8_t>(msg.app_id.size()));
    w.text(msg.app_id);
    w.bytes(msg.app_sig);
    w.u64(msg.policy_version);
    w.u8(static_cast<std::uint8_t>(msg.flag));
    if (carries_body(msg.msg_type)) {
        if (msg.body.size() > UINT32_MAX - 1024) throw EncodeError("body too large");
        w.u32(static_cast<std::uint32_t>(msg.body.size()));
        w.text(msg.body);
    }

    auto& buf = w.buffer();
    const auto payload = static_cast<std::uint32_t>(buf.size() - kFrameHeaderSize);
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<std::uint8_t>(payload >> (24 - 8 * i));
    return std::move(buf);
}

DecodeResult decode(std::span<const std::uint8_t> frame) {
    try {
        Reader r(frame);
        const auto payload_len = r.u32("length");
        if (payload_len != r.remaining())
            return Malformed{0, "length field " + std::to_string(payload_len) + " but " +
                                    std::to_string(r.remaining()) + " payload bytes"};

        ControlMessage m;
        const auto type_at = r.offset();
        const auto type = r.u8("msg_type");
        if (type < 1 || type > 5) return Malformed{type_at, "bad msg_type " + std::to_string(type)};
        m.msg_type = static_cast<MessageType>(type);
        r.fill(m.credential_hash, "credential_hash");
        r.fill(m.phone_mac.bytes, "phone_mac");
        r.fill(m.flow.src_ip.bytes, "src_ip");
        m.flow.src_port = r.u16("src_port");
        r.fill(m.flow.dst_ip.bytes, "dst_ip");
        m.flow.dst_port = r.u16("dst_port");
        const auto proto_at = r.offset();
        const auto proto = r.u8("protocol");
        if (proto != 6 && proto != 17)
            return Malformed{proto_at, "bad protocol " + std::to_string(proto)};
        m.flow.protocol = static_cast<Protocol>(proto);
        const auto app_len = r.u8("app_id_len");
        m.app_id = r.text(app_len, "app_id");
        r.fill(m.app_sig, "app_sig");
        m.policy_version = r.u64("policy_version");
        const auto flag_at = r.offset();
        const auto flag = r.u8("flag");
        if (flag > 1) return Malformed{flag_at, "bad flag " + std::to_string(flag)};
        m.flag = static_cast<Flag>(flag);
        if (carries_body(m.msg_type)) {
            const auto body_len = r.u32("body_len");
            m.body = r.text(body_len, "body");
        }
        if (r.remaining() != 0) return Malformed{r.offset(), "trailing data"};
        return m;
    } catch (const DecodeFailure& f) {
        return f.error;
    }
}

std::string_view to_string(AuthResult r) {
    switch (r) {
        case AuthResult::Ok: return "Ok";
        case AuthResult::UnknownPhone: return "UnknownPhone";
        case AuthResult::BadCredentials: return "BadCredentials";
        case AuthResult::CertMismatch: return "CertMismatch";
        case AuthResult::StaleVersion: return "StaleVersion";
    }
    return "?";
}

AuthResult authenticate_identity(const ControlMessage& msg, std::string_view channel_cert,
                                 const policy::Policy& policy) {
    const auto* phone = policy.find_phone(msg.phone_mac);
    if (!phone) return AuthResult::UnknownPhone;
    if (phone->credential_hash != msg.credential_hash) return AuthResult::BadCredentials;
    if (phone->cert_id != channel_cert) return AuthResult::CertMismatch;
    return AuthResult::Ok;
}

AuthResult authenticate(const ControlMessage& msg, std::string_view channel_cert,
                        const policy::Policy& policy) {
    if (auto r = authenticate_identity(msg, channel_cert, policy); r != AuthResult::Ok) return r;
    if (msg.policy_version != policy.version) return AuthResult::StaleVersion;
    return AuthResult::Ok;
}

}  // namespace hanguard::proto
