#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "hanguard/control_proto.hpp"

namespace hanguard::proto {
namespace {

using namespace hanguard::testing;

std::vector<std::uint8_t> read_hex_file(const std::string& path) {
    std::ifstream in(path);
    std::string line, hex;
    while (std::getline(in, line)) hex += line;
    return from_hex(hex);
}

ControlMessage golden_message() {
    ControlMessage m;
    m.msg_type = MessageType::FlowDecision;
    for (std::size_t i = 0; i < 32; ++i) m.credential_hash[i] = static_cast<std::uint8_t>(i);
    m.phone_mac = mac_of(1, 1);
    m.flow = make_flow(lan_ip(101), 40000, lan_ip(20), 80, Protocol::Tcp);
    m.app_id = "com.belkin.wemoandroid";
    for (std::size_t i = 0; i < 32; ++i) m.app_sig[i] = static_cast<std::uint8_t>(0xA0 + i);
    m.policy_version = 7;
    m.flag = Flag::Validate;
    return m;
}

TEST(Codec, MinimalFrameSize) {
    ControlMessage m;
    m.app_id = "a";
    const auto frame = encode(m);
    // 1 type + 32 cred + 6 mac + 16+2 src + 16+2 dst + 1 proto + 1 len + 1 app + 32 sig + 8 version + 1 flag
    EXPECT_EQ(frame.size() - kFrameHeaderSize, 119u);
    EXPECT_EQ(kFixedPayloadSize, 118u);
}

TEST(Codec, GoldenVectorMatchesLayoutByteForByte) {
    const auto golden = read_hex_file(std::string(HANGUARD_TEST_DATA) + "/flow_decision_golden.hex");
    ASSERT_EQ(golden.size(), 4u + 140u);

    // Offsets computed by hand from the field widths.
    const std::uint8_t* p = golden.data() + 4;
    EXPECT_EQ(golden[0], 0x00);
    EXPECT_EQ(golden[3], 0x8C);     // payload length 140
    EXPECT_EQ(p[0], 0x01);          // msg_type
    EXPECT_EQ(p[1], 0x00);          // cred[0]
    EXPECT_EQ(p[32], 0x1F);         // cred[31]
    EXPECT_EQ(p[33], 0x02);         // mac[0]
    EXPECT_EQ(p[38], 0x01);         // mac[5]
    EXPECT_EQ(p[49], 0xFF);         // src ip mapped prefix
    EXPECT_EQ(p[50], 0xFF);
    EXPECT_EQ(p[51], 192);          // src ip v4 part
    EXPECT_EQ(p[54], 101);
    EXPECT_EQ(p[55], 0x9C);         // src port 40000
    EXPECT_EQ(p[56], 0x40);
    EXPECT_EQ(p[72], 20);           // dst ip last byte
    EXPECT_EQ(p[73], 0x00);         // dst port 80
    EXPECT_EQ(p[74], 0x50);
    EXPECT_EQ(p[75], 6);            // protocol
    EXPECT_EQ(p[76], 22);           // app_id length
    EXPECT_EQ(p[77], 'c');
    EXPECT_EQ(p[98], 'd');
    EXPECT_EQ(p[99], 0xA0);         // sig[0]
    EXPECT_EQ(p[130], 0xBF);        // sig[31]
    EXPECT_EQ(p[138], 7);           // version low byte
    EXPECT_EQ(p[139], 1);           // flag

    EXPECT_EQ(encode(golden_message()), golden);
    const auto decoded = decode(golden);
    ASSERT_TRUE(std::holds_alternative<ControlMessage>(decoded));
    EXPECT_EQ(std::get<ControlMessage>(decoded), golden_message());
}

ControlMessage random_message(std::mt19937_64& rng) {
    auto byte = [&] { return static_cast<std::uint8_t>(rng()); };
    ControlMessage m;
    m.msg_type = static_cast<MessageType>(1 + rng() % 5);
    for (auto& b : m.credential_hash) b = byte();
    for (auto& b : m.phone_mac.bytes) b = byte();
    for (auto& b : m.flow.src_ip.bytes) b = byte();
    for (auto& b : m.flow.dst_ip.bytes) b = byte();
    m.flow.src_port = static_cast<std::uint16_t>(rng());
    m.flow.dst_port = static_cast<std::uint16_t>(rng());
    m.flow.protocol = rng() % 2 ? Protocol::Tcp : Protocol::Udp;
    const auto len = 1 + rng() % kMaxAppIdLength;
    for (std::size_t i = 0; i < len; ++i) m.app_id += static_cast<char>(byte());
    for (auto& b : m.app_sig) b = byte();
    m.policy_version = rng();
    m.flag = rng() % 2 ? Flag::Validate : Flag::Invalidate;
    if (carries_body(m.msg_type)) {
        const auto blen = rng() % 300;
        for (std::size_t i = 0; i < blen; ++i) m.body += static_cast<char>(byte());
    }
    return m;
}

TEST(Codec, RoundTripRandomMessages) {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 20000; ++i) {
        const auto m = random_message(rng);
        const auto frame = encode(m);
        const auto d = decode(frame);
        ASSERT_TRUE(std::holds_alternative<ControlMessage>(d)) << std::get<Malformed>(d).reason;
        ASSERT_EQ(std::get<ControlMessage>(d), m) << "message " << i;
    }
}

TEST(Codec, EveryAppIdLength) {
    auto m = golden_message();
    for (std::size_t n = 1; n <= kMaxAppIdLength; ++n) {
        m.app_id.assign(n, 'x');
        const auto frame = encode(m);
        ASSERT_EQ(frame.size(), kFrameHeaderSize + kFixedPayloadSize + n);
        ASSERT_EQ(std::get<ControlMessage>(decode(frame)), m);
    }
    m.app_id.assign(256, 'x');
    EXPECT_THROW(encode(m), EncodeError);
}

TEST(Codec, BodyOnlyOnUpdateAndPush) {
    auto m = golden_message();
    m.body = "x";
    EXPECT_THROW(encode(m), EncodeError);
    m.msg_type = MessageType::PolicyPush;
    EXPECT_EQ(std::get<ControlMessage>(decode(encode(m))), m);
}

TEST(Codec, MalformedInputs) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::uint8_t> junk(10);
        for (auto& b : junk) b = static_cast<std::uint8_t>(rng());
        ASSERT_TRUE(std::holds_alternative<Malformed>(decode(junk)));
    }
    auto frame = encode(golden_message());
    auto longer = frame;
    longer.push_back(0);
    EXPECT_TRUE(std::holds_alternative<Malformed>(decode(longer)));
    auto trailing = frame;
    trailing.push_back(0);
    trailing[3] = static_cast<std::uint8_t>(trailing[3] + 1);  // length covers the extra byte
    const auto t = decode(trailing);
    ASSERT_TRUE(std::holds_alternative<Malformed>(t));
    EXPECT_EQ(std::get<Malformed>(t).reason, "trailing data");
    for (std::size_t cut = 0; cut < frame.size(); ++cut) {
        std::vector<std::uint8_t> shorter(frame.begin(), frame.begin() + static_cast<std::ptrdiff_t>(cut));
        ASSERT_TRUE(std::holds_alternative<Malformed>(decode(shorter))) << cut;
    }
    auto bad_type = frame;
    bad_type[4] = 9;
    EXPECT_EQ(std::get<Malformed>(decode(bad_type)).offset, 4u);
    auto bad_flag = frame;
    bad_flag.back() = 2;
    EXPECT_EQ(std::get<Malformed>(decode(bad_flag)).offset, frame.size() - 1);
}

TEST(Authenticate, Outcomes) {
    const auto p = home_policy();
    ControlMessage m;
    m.phone_mac = kUserPhone;
    m.credential_hash = credential_hash("user", "pw-u");
    m.policy_version = p.version;
    EXPECT_EQ(authenticate(m, "cert-user", p), AuthResult::Ok);
    EXPECT_EQ(authenticate(m, "cert-admin", p), AuthResult::CertMismatch);

    auto stale = m;
    stale.policy_version = p.version - 1;
    EXPECT_EQ(authenticate(stale, "cert-user", p), AuthResult::StaleVersion);
    EXPECT_EQ(authenticate_identity(stale, "cert-user", p), AuthResult::Ok);

    auto wrong = m;
    wrong.credential_hash = credential_hash("user", "guess");
    EXPECT_EQ(authenticate(wrong, "cert-user", p), AuthResult::BadCredentials);

    auto guest = m;
    guest.phone_mac = kGuestPhone;
    EXPECT_EQ(authenticate(guest, "cert-user", p), AuthResult::UnknownPhone);
}

}  // namespace
}  // namespace hanguard::proto
