#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "hanguard/procfs.hpp"

namespace hanguard::procfs {
namespace {

using namespace hanguard::testing;

// Independent oracle: Linux prints each 32-bit word as a little-endian integer,
// so the hex digit pairs appear in reverse byte order.
std::string reversed_word_oracle(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%02X%02X%02X%02X", d, c, b, a);
    return buf;
}

TEST(Hex, V4Examples) {
    EXPECT_EQ(hex_to_ipv4("BD01A8C0").to_string(), "192.168.1.189");
    EXPECT_EQ(hex_to_ipv4("2001A8C0").to_string(), "192.168.1.32");
    EXPECT_EQ(hex_to_ipv4("00000000").to_string(), "0.0.0.0");
    EXPECT_EQ(hex_to_ipv4("bd01a8c0").to_string(), "192.168.1.189");
    EXPECT_THROW(hex_to_ipv4("BD01A8CZ"), ParseError);
    EXPECT_THROW(hex_to_ipv4("BD01A8C"), ParseError);
}

TEST(Hex, MappedExamples) {
    EXPECT_EQ(mapped6_to_ipv4("0000000000000000FFFF0000BD01A8C0")->to_string(), "192.168.1.189");
    EXPECT_EQ(mapped6_to_ipv4("0000000000000000FFFF00002001A8C0")->to_string(), "192.168.1.32");
    EXPECT_EQ(mapped6_to_ipv4("00000000000000000000000000000001"), std::nullopt);
    EXPECT_THROW(mapped6_to_ipv4("0000000000000000FFFF0000BD01A8C"), ParseError);
}

TEST(Hex, MappedSucceedsExactlyOnFixedPrefix) {
    std::mt19937_64 rng(11);
    const std::string prefix = "0000000000000000FFFF0000";
    const char* digits = "0123456789ABCDEF";
    for (int i = 0; i < 20000; ++i) {
        std::string s = prefix + "BD01A8C0";
        // Flip between zero and a few random digit changes anywhere in the string.
        const int flips = static_cast<int>(rng() % 3);
        for (int f = 0; f < flips; ++f) s[rng() % 32] = digits[rng() % 16];
        const bool has_prefix = s.compare(0, 24, prefix) == 0;
        ASSERT_EQ(mapped6_to_ipv4(s).has_value(), has_prefix) << s;
    }
}

TEST(Hex, ByteReversalOracleAgreesForRandomAddresses) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 10000; ++i) {
        const auto v = static_cast<std::uint32_t>(rng());
        const Ipv4Address ip{v};
        const auto oracle = reversed_word_oracle(static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                                                 static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v));
        ASSERT_EQ(ipv4_to_hex(ip), oracle);
        ASSERT_EQ(hex_to_ipv4(oracle), ip);
    }
}

TEST(Line, PortIsBigEndianHex) {
    const auto line = parse_line(
        "   0: BD01A8C0:1F90 2001A8C0:0050 01 00000000:00000000 00:00000000 00000000 10123        0 1 1 0 100 0 0 10 0");
    EXPECT_EQ(line.local.port, 8080);
    EXPECT_EQ(line.remote.port, 80);
    EXPECT_EQ(line.local.addr, IpAddress::from_v4(Ipv4Address::parse("192.168.1.189")));
    EXPECT_EQ(line.uid, 10123u);
    EXPECT_EQ(line.state, 0x01);
}

TEST(Line, HeaderIsAParseError) {
    for (auto k : kAllFiles) EXPECT_THROW(parse_line(header_line(k)), ParseError) << file_name(k);
}

TEST(Line, ErrorsNameTheColumn) {
    try {
        parse_line("   0: BD01A8C0:1F90 2001A8C0:0050 ZZ 00000000:00000000 00:00000000 00000000 0 0 1");
        FAIL();
    } catch (const LineParseError& e) {
        EXPECT_EQ(e.column(), 3u);
    }
    try {
        parse_line("   0: BD01A8C0:1F9 2001A8C0:0050 01 00000000:00000000 00:00000000 00000000 0 0 1");
        FAIL();
    } catch (const LineParseError& e) {
        EXPECT_EQ(e.column(), 1u);
    }
    EXPECT_THROW(parse_line("   0: BD01A8C0:1F90"), LineParseError);
}

TEST(Render, HandComputedLocalAddress) {
    const auto flow = make_flow(Ipv4Address::parse("192.168.1.189"), 8080, Ipv4Address::parse("192.168.1.32"), 80,
                                Protocol::Tcp);
    const auto v4 = render_line(flow, 10123, 0x01, 0, AddressForm::V4);
    EXPECT_NE(v4.find(" BD01A8C0:1F90 2001A8C0:0050 01 "), std::string::npos) << v4;
    const auto v6 = render_line(flow, 10123, 0x01, 0, AddressForm::Mapped6);
    EXPECT_NE(v6.find("0000000000000000FFFF00002001A8C0:0050"), std::string::npos) << v6;
    EXPECT_NE(v6.find("0000000000000000FFFF0000BD01A8C0:1F90"), std::string::npos) << v6;
}

TEST(Render, ParseInvertsRenderForRandomFlows) {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 20000; ++i) {
        const auto flow = make_flow(Ipv4Address{static_cast<std::uint32_t>(rng())}, static_cast<std::uint16_t>(rng()),
                                    Ipv4Address{static_cast<std::uint32_t>(rng())}, static_cast<std::uint16_t>(rng()),
                                    rng() % 2 ? Protocol::Tcp : Protocol::Udp);
        const auto uid = static_cast<std::uint32_t>(rng() % 100000);
        const auto state = static_cast<std::uint8_t>(1 + rng() % 11);
        const int slot = static_cast<int>(rng() % 5000);
        for (auto form : {AddressForm::V4, AddressForm::Mapped6}) {
            const auto line = parse_line(render_line(flow, uid, state, slot, form));
            ASSERT_EQ(line.local.addr, flow.src_ip);
            ASSERT_EQ(line.remote.addr, flow.dst_ip);
            ASSERT_EQ(line.local.port, flow.src_port);
            ASSERT_EQ(line.remote.port, flow.dst_port);
            ASSERT_EQ(line.uid, uid);
            ASSERT_EQ(line.state, state);
            ASSERT_EQ(line.slot, slot);
        }
    }
}

TEST(Golden, Tcp6File) {
    std::ifstream in(std::string(HANGUARD_TEST_DATA) + "/proc_net_tcp6_golden.txt");
    ASSERT_TRUE(in);
    std::string text;
    std::getline(in, text);  // header
    std::vector<ProcNetLine> lines;
    while (std::getline(in, text)) lines.push_back(parse_line(text));
    ASSERT_EQ(lines.size(), 3u);

    EXPECT_EQ(lines[0].local.addr.to_v4()->to_string(), "192.168.1.189");
    EXPECT_EQ(lines[0].local.port, 40000);
    EXPECT_EQ(lines[0].remote.addr.to_v4()->to_string(), "192.168.1.32");
    EXPECT_EQ(lines[0].remote.port, 80);
    EXPECT_EQ(lines[0].uid, 10123u);
    EXPECT_FALSE(is_closing(lines[0].state));

    EXPECT_EQ(lines[1].remote.addr.to_v4()->to_string(), "8.8.8.8");
    EXPECT_EQ(lines[1].remote.port, 443);
    EXPECT_EQ(lines[1].state, static_cast<std::uint8_t>(SocketState::TimeWait));
    EXPECT_TRUE(is_closing(lines[1].state));

    // Native v6 loopback listener: not mapped, last byte 1.
    EXPECT_FALSE(lines[2].local.addr.is_v4_mapped());
    EXPECT_EQ(lines[2].local.addr.bytes[15], 1);
    EXPECT_EQ(lines[2].local.port, 53);
    EXPECT_EQ(lines[2].uid, 0u);
}

TEST(ProcFile, MtimeMovesOnlyOnChange) {
    ProcFile f;
    EXPECT_FALSE(f.set_lines({}, SimTime{5}));
    EXPECT_EQ(f.mtime(), SimTime{0});
    EXPECT_TRUE(f.set_lines({"a"}, SimTime{7}));
    EXPECT_EQ(f.mtime(), SimTime{7});
    EXPECT_FALSE(f.set_lines({"a"}, SimTime{9}));
    EXPECT_EQ(f.mtime(), SimTime{7});
}

TEST(SocketTable, RoutesFlowsToTheRightFile) {
    SocketTable t;
    const auto a = make_flow(lan_ip(101), 40000, lan_ip(20), 80, Protocol::Tcp);
    const auto b = make_flow(lan_ip(101), 40001, lan_ip(21), 53, Protocol::Udp);
    t.open(a, 10050, AddressForm::Mapped6, SimTime{10});
    t.open(b, 10060, AddressForm::V4, SimTime{20});
    EXPECT_EQ(t.proc().file(FileKind::Tcp6).lines().size(), 1u);
    EXPECT_EQ(t.proc().file(FileKind::Udp).lines().size(), 1u);
    EXPECT_TRUE(t.proc().file(FileKind::Tcp).lines().empty());
    EXPECT_EQ(t.proc().file(FileKind::Tcp6).mtime(), SimTime{10});
    EXPECT_EQ(t.proc().file(FileKind::Udp).mtime(), SimTime{20});
    EXPECT_EQ(t.proc().file(FileKind::Tcp6).mtime(), SimTime{10});  // untouched by the udp open

    t.set_state(a, SocketState::TimeWait, SimTime{30});
    EXPECT_TRUE(is_closing(parse_line(t.proc().file(FileKind::Tcp6).lines()[0]).state));
    t.close(a, SimTime{40});
    EXPECT_TRUE(t.proc().file(FileKind::Tcp6).lines().empty());
    EXPECT_EQ(t.proc().file(FileKind::Tcp6).mtime(), SimTime{40});
    EXPECT_FALSE(t.contains(a));
}

}  // namespace
}  // namespace hanguard::procfs
