#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "hanguard/controller.hpp"
#include "hanguard/monitor.hpp"

namespace hanguard::monitor {
namespace {

using namespace hanguard::testing;
using procfs::AddressForm;
using procfs::SocketState;
using procfs::SocketTable;

constexpr std::uint32_t kWemoUid = 10050;
constexpr std::uint32_t kOtherUid = 10060;

std::map<std::uint32_t, InstalledApp> packages() {
    return {{kWemoUid, {kWemo, sig_of("belkin")}}, {kOtherUid, {kOther, sig_of("other")}}};
}

MonitorConfig user_config(SituationSource source = ProcfsPoll{}) {
    MonitorConfig c;
    c.phone_mac = kUserPhone;
    c.credential_hash = credential_hash("user", "pw-u");
    c.cert_id = "cert-user";
    c.node = NodeRole::Scn;
    c.source = std::move(source);
    return c;
}

MonitorConfig admin_config() {
    MonitorConfig c;
    c.phone_mac = kAdminPhone;
    c.credential_hash = credential_hash("admin", "pw-a");
    c.cert_id = "cert-admin";
    c.node = NodeRole::Mcn;
    return c;
}

FlowId to_switch(std::uint16_t sport = 40000) { return make_flow(lan_ip(101), sport, lan_ip(20), 80, Protocol::Tcp); }

FlowObservation opened(const FlowId& f, const std::string& app, const Digest32& sig, SimTime at = SimTime{0}) {
    return {f, app, sig, FlowEvent::Opened, at};
}

// Router side of the control channel backed by a real Controller.
class ControllerLink : public RouterLink {
public:
    ControllerLink(controller::Controller& c, std::string cert) : c_(c), cert_(std::move(cert)) {}
    std::optional<std::vector<std::uint8_t>> exchange(std::span<const std::uint8_t> frame) override {
        if (!up) return std::nullopt;
        return c_.handle_sync_frame(frame, cert_, SimTime{0}, {});
    }
    bool up = true;

private:
    controller::Controller& c_;
    std::string cert_;
};

controller::Controller make_controller(policy::Policy p) {
    return controller::Controller({}, std::move(p), std::make_shared<controller::MemoryPolicyStore>());
}

// ── Evaluation ───────────────────────────────────────────────────────────────

TEST(Evaluate, AuthorizedAppToBoundDevice) {
    Monitor m(user_config(), home_policy(), packages());
    const auto msg = m.evaluate_flow(opened(to_switch(), kWemo, sig_of("belkin")));
    ASSERT_TRUE(msg);
    EXPECT_EQ(msg->flag, proto::Flag::Validate);
    EXPECT_EQ(msg->msg_type, proto::MessageType::FlowDecision);
    EXPECT_EQ(msg->policy_version, home_policy().version);
    EXPECT_EQ(msg->phone_mac, kUserPhone);
    EXPECT_EQ(msg->app_id, kWemo);
    EXPECT_TRUE(m.alerts().empty());
    EXPECT_TRUE(m.known_flows().contains(to_switch()));
}

TEST(Evaluate, RepackagedAppRaisesAlert) {
    Monitor m(user_config(), home_policy(), packages());
    EXPECT_FALSE(m.evaluate_flow(opened(to_switch(), kWemo, sig_of("attacker"))));
    ASSERT_EQ(m.alerts().size(), 1u);
    EXPECT_NE(m.alerts()[0].reason.find("signature"), std::string::npos);
}

TEST(Evaluate, UnboundAppRaisesAlert) {
    Monitor m(user_config(), home_policy(), packages());
    EXPECT_FALSE(m.evaluate_flow(opened(to_switch(), kOther, sig_of("other"))));
    EXPECT_EQ(m.alerts().size(), 1u);
}

TEST(Evaluate, NonProtectedDestinationsAreNotInteresting) {
    Monitor m(user_config(), home_policy(), packages());
    const auto internet = make_flow(lan_ip(101), 40000, Ipv4Address::parse("8.8.8.8"), 443, Protocol::Tcp);
    const auto laptop = make_flow(lan_ip(101), 40001, lan_ip(50), 22, Protocol::Tcp);
    EXPECT_FALSE(m.evaluate_flow(opened(internet, kOther, sig_of("other"))));
    EXPECT_FALSE(m.evaluate_flow(opened(laptop, kOther, sig_of("other"))));
    EXPECT_TRUE(m.alerts().empty());
}

TEST(Evaluate, VerifyAppIdentity) {
    const auto p = home_policy();
    EXPECT_TRUE(verify_app_identity(kWemo, sig_of("belkin"), p));
    EXPECT_FALSE(verify_app_identity(kWemo, sig_of("someone"), p));
    EXPECT_FALSE(verify_app_identity("com.unknown", sig_of("belkin"), p));
}

TEST(EvaluateProperty, ValidatesExactlyTheAuthorizedTriples) {
    std::mt19937_64 rng(314);
    std::size_t validates = 0, checked = 0;
    for (int trial = 0; trial < 500; ++trial) {
        auto rp = random_policy(rng);
        for (const auto& app : rp.apps) rp.policy.apps[app].signature = sig_of(app);
        for (const auto& phone : rp.phones) {
            MonitorConfig cfg;
            cfg.phone_mac = phone;
            Monitor m(cfg, rp.policy, {});
            std::uint16_t port = 1000;
            for (const auto& dev : rp.devices) {
                for (const auto& app : rp.apps) {
                    for (bool good_sig : {true, false}) {
                        const auto dst = rp.policy.devices.at(dev).ip;
                        const auto f = make_flow(rp.policy.phones.at(phone).reserved_ip, port++, dst, 80, Protocol::Tcp);
                        const auto msg = m.evaluate_flow(opened(f, app, good_sig ? sig_of(app) : sig_of("x")));
                        const bool allowed =
                            good_sig && policy::authorize(rp.policy, phone, app, dev) == policy::Decision::Allow;
                        ASSERT_EQ(msg.has_value(), allowed) << "trial " << trial;
                        if (msg) {
                            ASSERT_EQ(msg->policy_version, m.replica_version());
                            ++validates;
                        }
                        ++checked;
                    }
                }
            }
        }
    }
    EXPECT_GT(checked, 10000u);
    EXPECT_GT(validates, 0u);
}

// ── Termination ──────────────────────────────────────────────────────────────

TEST(Termination, TcpCloseInvalidates) {
    Monitor m(user_config(), home_policy(), packages());
    ASSERT_TRUE(m.evaluate_flow(opened(to_switch(), kWemo, sig_of("belkin"))));
    const FlowObservation closed{to_switch(), kWemo, sig_of("belkin"), FlowEvent::Closed, SimTime{5}};
    const auto out = m.detect_termination(std::span(&closed, 1), SimTime{5});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].flag, proto::Flag::Invalidate);
    EXPECT_EQ(out[0].flow, to_switch());
    EXPECT_FALSE(m.known_flows().contains(to_switch()));
}

TEST(Termination, UdpIdleInvalidatesAtTimeout) {
    Monitor m(user_config(), home_policy(), packages());
    const auto f = make_flow(lan_ip(101), 5000, lan_ip(20), 49153, Protocol::Udp);
    const SimTime t0{1'000'000};
    ASSERT_TRUE(m.evaluate_flow(opened(f, kWemo, sig_of("belkin"), t0)));
    const auto timeout = m.config().udp_idle_timeout;
    EXPECT_TRUE(m.detect_termination({}, t0 + timeout - SimTime{1}).empty());
    const auto out = m.detect_termination({}, t0 + timeout);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].flag, proto::Flag::Invalidate);
}

TEST(Termination, ActiveFlowUntouched) {
    Monitor m(user_config(), home_policy(), packages());
    ASSERT_TRUE(m.evaluate_flow(opened(to_switch(), kWemo, sig_of("belkin"))));
    EXPECT_TRUE(m.detect_termination({}, SimTime{100'000'000}).empty());
    EXPECT_TRUE(m.known_flows().contains(to_switch()));
}

// ── Polling ──────────────────────────────────────────────────────────────────

TEST(Poll, InjectedLineYieldsOpenedThenClosed) {
    Monitor m(user_config(), home_policy(), packages());
    SocketTable t;
    EXPECT_TRUE(m.poll_once(t.proc(), SimTime{0}).empty());
    t.open(to_switch(), kWemoUid, AddressForm::Mapped6, SimTime{3});
    auto obs = m.poll_once(t.proc(), SimTime{10});
    ASSERT_EQ(obs.size(), 1u);
    EXPECT_EQ(obs[0].event, FlowEvent::Opened);
    EXPECT_EQ(obs[0].app_id, kWemo);
    EXPECT_EQ(obs[0].app_sig, sig_of("belkin"));
    EXPECT_EQ(obs[0].flow, to_switch());
    EXPECT_TRUE(m.poll_once(t.proc(), SimTime{20}).empty());
    t.set_state(to_switch(), SocketState::FinWait1, SimTime{25});
    obs = m.poll_once(t.proc(), SimTime{30});
    ASSERT_EQ(obs.size(), 1u);
    EXPECT_EQ(obs[0].event, FlowEvent::Closed);
}

TEST(Poll, UnattributedSocketsIgnored) {
    Monitor m(user_config(), home_policy(), packages());
    SocketTable t;
    t.open(to_switch(), 1000, AddressForm::V4, SimTime{1});
    EXPECT_TRUE(m.poll_once(t.proc(), SimTime{2}).empty());
}

TEST(Poll, SmarterSkipsUnchangedFilesNaiveParsesAll) {
    Monitor smart(user_config(ProcfsPoll{SimTime{10'000}, Strategy::Smarter}), home_policy(), packages());
    Monitor naive(user_config(ProcfsPoll{SimTime{10'000}, Strategy::Naive}), home_policy(), packages());
    SocketTable t;
    for (std::uint16_t i = 0; i < 5; ++i) t.open(to_switch(40000 + i), kWemoUid, AddressForm::Mapped6, SimTime{1});
    smart.poll_once(t.proc(), SimTime{10});
    naive.poll_once(t.proc(), SimTime{10});
    const auto s0 = smart.poll_stats().lines_parsed;
    const auto n0 = naive.poll_stats().lines_parsed;
    EXPECT_EQ(s0, 5u);
    EXPECT_EQ(n0, 5u);
    for (int k = 2; k <= 11; ++k) {
        smart.poll_once(t.proc(), SimTime{k * 10});
        naive.poll_once(t.proc(), SimTime{k * 10});
        EXPECT_EQ(smart.poll_stats().lines_parsed, s0);  // idle poll parses nothing
    }
    EXPECT_EQ(naive.poll_stats().lines_parsed, n0 + 50);
}

TEST(PollProperty, SmarterNeverParsesMoreAndSeesTheSame) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        Monitor smart(user_config(ProcfsPoll{SimTime{1000}, Strategy::Smarter}), home_policy(), packages());
        Monitor naive(user_config(ProcfsPoll{SimTime{1000}, Strategy::Naive}), home_policy(), packages());
        SocketTable t;
        std::vector<FlowId> open;
        SimTime now{0};
        for (int step = 0; step < 200; ++step) {
            now += SimTime{1 + static_cast<std::int64_t>(rng() % 700)};
            const auto r = rng() % 4;
            if (r == 0) {
                const auto f = make_flow(lan_ip(101), static_cast<std::uint16_t>(30000 + step), lan_ip(20 + rng() % 2),
                                         80, rng() % 2 ? Protocol::Tcp : Protocol::Udp);
                t.open(f, rng() % 2 ? kWemoUid : kOtherUid, rng() % 2 ? AddressForm::V4 : AddressForm::Mapped6, now);
                open.push_back(f);
            } else if (r == 1 && !open.empty()) {
                const auto i = rng() % open.size();
                t.close(open[i], now);
                open.erase(open.begin() + static_cast<std::ptrdiff_t>(i));
            } else {
                const auto a = smart.poll_once(t.proc(), now);
                const auto b = naive.poll_once(t.proc(), now);
                ASSERT_EQ(a.size(), b.size());
                for (std::size_t i = 0; i < a.size(); ++i) {
                    ASSERT_EQ(a[i].flow, b[i].flow);
                    ASSERT_EQ(a[i].event, b[i].event);
                }
                ASSERT_LE(smart.poll_stats().lines_parsed, naive.poll_stats().lines_parsed);
            }
        }
    }
}

TEST(PollProperty, FlowLivingAtLeastOneIntervalIsAlwaysSeen) {
    // Polls at multiples of I; a flow opens at phase o and closes L later. Every
    // (I, L >= I, o) on a 1 ms grid up to 200 ms.
    std::size_t cases = 0;
    std::size_t short_missed = 0;
    for (std::int64_t interval = 1; interval <= 200; ++interval) {
        Monitor m(user_config(ProcfsPoll{from_ms(interval), Strategy::Smarter}), home_policy(), packages());
        SocketTable t;
        std::int64_t base = 0;
        std::uint16_t port = 1;
        for (std::int64_t life = std::max<std::int64_t>(1, interval / 2); life <= 200; ++life) {
            for (std::int64_t phase = 0; phase < interval; ++phase) {
                const auto f = make_flow(lan_ip(101), port++, lan_ip(20), 80, Protocol::Tcp);
                const auto open_at = base + phase;
                const auto close_at = open_at + life;
                bool opened_on = false;
                bool open_done = false, close_done = false;
                std::int64_t poll = base;
                while (!close_done || poll <= close_at) {
                    if (!open_done && open_at <= poll) {
                        t.open(f, kWemoUid, AddressForm::Mapped6, from_ms(open_at));
                        open_done = true;
                    }
                    if (!close_done && close_at <= poll) {
                        t.close(f, from_ms(close_at));
                        close_done = true;
                    }
                    for (const auto& o : m.poll_once(t.proc(), from_ms(poll)))
                        if (o.flow == f && o.event == FlowEvent::Opened) opened_on = true;
                    poll += interval;
                }
                base = poll;
                if (life >= interval) {
                    ASSERT_TRUE(opened_on) << "I=" << interval << " L=" << life << " phase=" << phase;
                    ++cases;
                } else if (!opened_on) {
                    ++short_missed;
                }
            }
        }
    }
    EXPECT_GT(cases, 1'000'000u);
    EXPECT_GT(short_missed, 0u);  // shorter flows can slip between polls
}

// ── Synchronization ──────────────────────────────────────────────────────────

policy::Policy advanced(policy::Policy p, int steps) {
    for (int i = 0; i < steps; ++i) p = policy::bind_app_device(p, kOther, kCamera, "cat" + std::to_string(i));
    return p;
}

TEST(Sync, BehindReplicaCatchesUp) {
    const auto v = home_policy().version;
    auto c = make_controller(advanced(home_policy(), 2));
    ControllerLink link(c, "cert-user");
    Monitor m(user_config(), home_policy(), packages());
    const auto r = m.on_network_change(link);
    EXPECT_EQ(r.kind, SyncOutcome::Kind::Updated);
    EXPECT_EQ(r.version, v + 2);
    EXPECT_EQ(m.replica_version(), v + 2);
    EXPECT_EQ(m.replica(), c.policy());
}

TEST(Sync, EqualVersionsTransferNothing) {
    auto c = make_controller(home_policy());
    ControllerLink link(c, "cert-user");
    Monitor m(user_config(), home_policy(), packages());
    EXPECT_EQ(m.on_network_change(link).kind, SyncOutcome::Kind::UpToDate);
}

TEST(Sync, UnreachableLeavesReplicaAlone) {
    auto c = make_controller(advanced(home_policy(), 2));
    ControllerLink link(c, "cert-user");
    link.up = false;
    Monitor m(user_config(), home_policy(), packages());
    EXPECT_EQ(m.on_network_change(link).kind, SyncOutcome::Kind::Unreachable);
    EXPECT_EQ(m.replica_version(), home_policy().version);
}

TEST(Sync, InstallRevokesFlowsNoLongerAllowed) {
    auto next = home_policy();
    policy::PolicyUpdate u;
    u.changes.push_back(policy::change::UnbindApp{kWemo, "wemo"});
    next = std::get<policy::Policy>(policy::apply_update(next, u, kAdminPhone));
    auto c = make_controller(next);
    ControllerLink link(c, "cert-user");
    Monitor m(user_config(), home_policy(), packages());
    ASSERT_TRUE(m.evaluate_flow(opened(to_switch(), kWemo, sig_of("belkin"))));
    const auto r = m.on_network_change(link);
    ASSERT_EQ(r.invalidations.size(), 1u);
    EXPECT_EQ(r.invalidations[0].flag, proto::Flag::Invalidate);
    EXPECT_EQ(r.invalidations[0].flow, to_switch());
    EXPECT_TRUE(m.known_flows().empty());
}

TEST(Push, McnUpdateAcknowledgedWithNextVersion) {
    auto c = make_controller(home_policy());
    ControllerLink link(c, "cert-admin");
    Monitor m(admin_config(), home_policy(), packages());
    policy::PolicyUpdate u;
    u.changes.push_back(policy::change::Bind{kOther, kCamera, "cam"});
    const auto r = m.mcn_push_update(u, link);
    ASSERT_TRUE(std::holds_alternative<std::uint64_t>(r));
    EXPECT_EQ(std::get<std::uint64_t>(r), home_policy().version + 1);
    EXPECT_EQ(m.replica_version(), home_policy().version + 1);
    EXPECT_EQ(c.policy().version, home_policy().version + 1);
    EXPECT_EQ(m.replica(), c.policy());
}

TEST(Push, UnreachableRouterRefusesUpdate) {
    auto c = make_controller(home_policy());
    ControllerLink link(c, "cert-admin");
    link.up = false;
    Monitor m(admin_config(), home_policy(), packages());
    policy::PolicyUpdate u;
    u.changes.push_back(policy::change::Bind{kOther, kCamera, "cam"});
    const auto r = m.mcn_push_update(u, link);
    ASSERT_TRUE(std::holds_alternative<PushFailure>(r));
    EXPECT_EQ(std::get<PushFailure>(r).error, PushError::Unreachable);
    EXPECT_EQ(m.replica_version(), home_policy().version);
}

TEST(Push, ScnRefusesLocally) {
    auto c = make_controller(home_policy());
    ControllerLink link(c, "cert-user");
    Monitor m(user_config(), home_policy(), packages());
    policy::PolicyUpdate u;
    u.changes.push_back(policy::change::Bind{kOther, kCamera, "cam"});
    const auto r = m.mcn_push_update(u, link);
    ASSERT_TRUE(std::holds_alternative<PushFailure>(r));
    EXPECT_EQ(std::get<PushFailure>(r).error, PushError::NotMaster);
    EXPECT_EQ(c.policy().version, home_policy().version);
}

// ── Tunnel proxy ─────────────────────────────────────────────────────────────

TEST(Proxy, FirstPacketCarriesDecisionLaterPacketsDoNot) {
    TunnelProxy tp{{kWemo}, SimTime{1500}};
    Monitor m(user_config(tp), home_policy(), packages());
    Packet p{kUserPhone, kSwitch, to_switch(), false, 100};
    const auto first = m.proxy_packet(p, kWemo, Direction::Outbound, SimTime{0});
    EXPECT_TRUE(first.tunneled);
    EXPECT_EQ(first.added_latency, SimTime{1500});
    EXPECT_EQ(first.packet.flow, p.flow);
    EXPECT_EQ(first.packet.size, p.size);
    ASSERT_TRUE(first.message);
    EXPECT_EQ(first.message->flag, proto::Flag::Validate);

    const auto second = m.proxy_packet(p, kWemo, Direction::Outbound, SimTime{10});
    EXPECT_TRUE(second.tunneled);
    EXPECT_FALSE(second.message);

    p.fin = true;
    const auto fin = m.proxy_packet(p, kWemo, Direction::Outbound, SimTime{20});
    ASSERT_TRUE(fin.message);
    EXPECT_EQ(fin.message->flag, proto::Flag::Invalidate);
}

TEST(Proxy, UnmanagedAppStaysOutsideTheTunnel) {
    TunnelProxy tp{{kWemo}, SimTime{1500}};
    Monitor m(user_config(tp), home_policy(), packages());
    const Packet p{kUserPhone, kSwitch, to_switch(), false, 100};
    const auto r = m.proxy_packet(p, kOther, Direction::Outbound, SimTime{0});
    EXPECT_FALSE(r.tunneled);
    EXPECT_EQ(r.added_latency, SimTime{0});
    EXPECT_FALSE(r.message);
}

}  // namespace
}  // namespace hanguard::monitor
