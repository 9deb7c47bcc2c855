#include "hanguard/sim/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "hanguard/crypto.hpp"
#include "hanguard/policy_text.hpp"

namespace hanguard::sim {

// ── Parameters ───────────────────────────────────────────────────────────────

namespace {

using IntField = std::int64_t SimParams::*;

const std::vector<std::pair<std::string, IntField>>& int_fields() {
    static const std::vector<std::pair<std::string, IntField>> fields{
        {"data_link_us", &SimParams::data_link_us},
        {"data_jitter_us", &SimParams::data_jitter_us},
        {"control_link_us", &SimParams::control_link_us},
        {"control_jitter_us", &SimParams::control_jitter_us},
        {"lan_us", &SimParams::lan_us},
        {"lan_jitter_us", &SimParams::lan_jitter_us},
        {"wan_us", &SimParams::wan_us},
        {"wan_jitter_us", &SimParams::wan_jitter_us},
        {"host_processing_us", &SimParams::host_processing_us},
        {"tunnel_hop_us", &SimParams::tunnel_hop_us},
        {"parse_cost_us", &SimParams::parse_cost_us},
        {"decision_apply_us", &SimParams::decision_apply_us},
        {"tcp_rto_ms", &SimParams::tcp_rto_ms},
        {"max_retries", &SimParams::max_retries},
        {"time_wait_ms", &SimParams::time_wait_ms},
        {"udp_idle_ms", &SimParams::udp_idle_ms},
        {"housekeeping_ms", &SimParams::housekeeping_ms},
        {"settle_ms", &SimParams::settle_ms},
        {"poll_ms", &SimParams::poll_ms},
        {"flow_lifetime_ms", &SimParams::flow_lifetime_ms},
        {"send_delay_ms", &SimParams::send_delay_ms},
        {"background_sockets", &SimParams::background_sockets},
        {"pfdc_capacity", &SimParams::pfdc_capacity},
        {"per_phone_limit", &SimParams::per_phone_limit},
        {"rate_window_ms", &SimParams::rate_window_ms},
        {"rate_threshold", &SimParams::rate_threshold},
        {"penalty_ms", &SimParams::penalty_ms},
        {"flood_excess", &SimParams::flood_excess},
        {"trials", &SimParams::trials},
    };
    return fields;
}

std::int64_t parse_int(std::string_view key, std::string_view v) {
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw ScenarioError("parameter " + std::string(key) + ": '" + std::string(v) + "' is not an integer");
    return out;
}

std::vector<std::string_view> split_commas(std::string_view v) {
    std::vector<std::string_view> out;
    while (!v.empty()) {
        const auto c = v.find(',');
        out.push_back(v.substr(0, c));
        if (c == std::string_view::npos) break;
        v.remove_prefix(c + 1);
    }
    return out;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
    return out;
}

}  // namespace

const std::vector<std::string>& SimParams::keys() {
    static const std::vector<std::string> all = [] {
        std::vector<std::string> k;
        for (const auto& [name, field] : int_fields()) k.push_back(name);
        k.push_back("strategy");
        k.push_back("poll_sweep");
        k.push_back("modes");
        std::sort(k.begin(), k.end());
        return k;
    }();
    return all;
}

void SimParams::set(std::string_view key, std::string_view value) {
    for (const auto& [name, field] : int_fields()) {
        if (name != key) continue;
        const auto v = parse_int(key, value);
        if (v < 0) throw ScenarioError("parameter " + name + " must not be negative");
        this->*field = v;
        if (key == "poll_ms" && v == 0) throw ScenarioError("poll_ms must be positive");
        return;
    }
    if (key == "strategy") {
        if (value == "naive")
            strategy = monitor::Strategy::Naive;
        else if (value == "smarter")
            strategy = monitor::Strategy::Smarter;
        else
            throw ScenarioError("strategy must be naive or smarter");
        return;
    }
    if (key == "poll_sweep") {
        std::vector<std::int64_t> sweep;
        for (auto part : split_commas(value)) {
            const auto v = parse_int(key, part);
            if (v <= 0) throw ScenarioError("poll_sweep entries must be positive");
            sweep.push_back(v);
        }
        poll_sweep = std::move(sweep);
        return;
    }
    if (key == "modes") {
        std::vector<bool> m;
        for (auto part : split_commas(value)) {
            if (part == "vanilla")
                m.push_back(true);
            else if (part == "hanguard")
                m.push_back(false);
            else
                throw ScenarioError("modes entries must be vanilla or hanguard");
        }
        if (m.empty()) throw ScenarioError("modes must not be empty");
        modes = std::move(m);
        return;
    }
    throw ScenarioError("unknown parameter '" + std::string(key) + "'");
}

std::string SimParams::get(std::string_view key) const {
    for (const auto& [name, field] : int_fields())
        if (name == key) return std::to_string(this->*field);
    if (key == "strategy") return std::string(monitor::to_string(strategy));
    if (key == "poll_sweep") {
        std::vector<std::string> parts;
        for (auto v : poll_sweep) parts.push_back(std::to_string(v));
        return join(parts);
    }
    if (key == "modes") {
        std::vector<std::string> parts;
        for (bool v : modes) parts.push_back(v ? "vanilla" : "hanguard");
        return join(parts);
    }
    throw ScenarioError("unknown parameter '" + std::string(key) + "'");
}

// ── Topology ─────────────────────────────────────────────────────────────────

Digest32 signature_of(std::string_view signer) { return sha256("signer:" + std::string(signer)); }

std::string cert_of(const PhoneDef& phone) { return "cert-" + phone.name; }

policy::Policy build_policy(const TopologyDef& topo) {
    std::vector<policy::PhoneSpec> phones;
    for (const auto& p : topo.phones) {
        if (!p.registered) continue;
        policy::PhoneSpec s;
        s.mac = p.mac;
        s.ip = p.ip;
        s.user = p.name;
        s.credential_hash = credential_hash(p.name, p.password);
        s.cert_id = cert_of(p);
        s.is_mcn = p.mcn;
        s.role = p.role;
        phones.push_back(s);
    }
    std::vector<policy::DeviceSpec> devices;
    for (const auto& d : topo.devices)
        devices.push_back({d.mac, d.ip, std::nullopt, d.is_protected, policy::Subnet::Iot});
    std::vector<policy::AppRecord> apps;
    for (const auto& a : topo.apps) apps.push_back({a.app_id, signature_of(a.signer), {}});

    auto pol = policy::default_policy(phones, devices, apps);
    for (const auto& a : topo.apps) {
        for (const auto& [dev, category] : a.bindings) {
            auto it = std::find_if(topo.devices.begin(), topo.devices.end(),
                                   [&](const DeviceDef& d) { return d.name == dev; });
            if (it == topo.devices.end()) throw ScenarioError("app " + a.app_id + " bound to unknown device " + dev);
            pol = policy::bind_app_device(pol, a.app_id, it->mac, category);
        }
    }
    return pol;
}

// ── Validation ───────────────────────────────────────────────────────────────

std::vector<std::string> validate_scenario(const Scenario& sc) {
    std::vector<std::string> errors;
    const auto& t = sc.topology;
    auto phone = [&](const std::string& n) -> const PhoneDef* {
        for (const auto& p : t.phones)
            if (p.name == n) return &p;
        return nullptr;
    };
    auto is_device = [&](const std::string& n) {
        return std::any_of(t.devices.begin(), t.devices.end(), [&](const DeviceDef& d) { return d.name == n; });
    };
    auto is_host = [&](const std::string& n) {
        return std::any_of(t.hosts.begin(), t.hosts.end(), [&](const HostDef& h) { return h.name == n; });
    };

    std::set<std::string> names;
    for (const auto& p : t.phones)
        if (!names.insert(p.name).second) errors.push_back("duplicate name " + p.name);
    for (const auto& d : t.devices)
        if (!names.insert(d.name).second) errors.push_back("duplicate name " + d.name);
    for (const auto& h : t.hosts)
        if (!names.insert(h.name).second) errors.push_back("duplicate name " + h.name);

    for (const auto& a : t.apps)
        for (const auto& [dev, cat] : a.bindings)
            if (!is_device(dev)) errors.push_back("app " + a.app_id + ": unknown device " + dev);

    for (std::size_t i = 0; i < sc.flows.size(); ++i) {
        const auto& f = sc.flows[i];
        const auto where = "flow " + std::to_string(i) + " (" + f.label + ")";
        const auto* p = phone(f.phone);
        if (!p) {
            errors.push_back(where + ": unknown phone " + f.phone);
        } else if (std::none_of(p->apps.begin(), p->apps.end(),
                                [&](const InstalledAppDef& a) { return a.app_id == f.app_id; })) {
            errors.push_back(where + ": app " + f.app_id + " not installed on " + f.phone);
        }
        if (!is_device(f.dst) && !is_host(f.dst)) errors.push_back(where + ": unknown destination " + f.dst);
        if (f.exchanges < 1) errors.push_back(where + ": exchanges must be at least 1");
    }

    for (const auto& a : sc.actions) {
        const auto where = "action " + a.label;
        if (!a.phone.empty() && !phone(a.phone)) errors.push_back(where + ": unknown phone " + a.phone);
        if (!a.dst.empty() && !is_device(a.dst)) errors.push_back(where + ": unknown device " + a.dst);
        if (!a.host.empty() && !is_host(a.host)) errors.push_back(where + ": unknown host " + a.host);
    }

    try {
        SimParams probe = sc.params;
        for (const auto& v : sc.variants)
            for (const auto& [k, val] : v.overrides) probe.set(k, val);
    } catch (const ScenarioError& e) {
        errors.push_back(std::string("variant: ") + e.what());
    }

    if (errors.empty()) {
        try {
            build_policy(t);
        } catch (const std::exception& e) {
            errors.push_back(std::string("topology: ") + e.what());
        }
    }
    return errors;
}

// ── Built-in scenarios ───────────────────────────────────────────────────────

namespace {

constexpr std::string_view kWemo = "com.belkin.wemoandroid";
constexpr std::string_view kMynerd = "com.mynerd.app";
constexpr std::string_view kEvil = "com.evil.flashlight";
constexpr std::string_view kBrowser = "com.android.chrome";
constexpr std::string_view kSafari = "com.apple.mobilesafari";

MacAddress mac(int group, int n) {
    MacAddress m;
    m.bytes = {0x02, 0x00, 0x00, 0x00, static_cast<std::uint8_t>(group), static_cast<std::uint8_t>(n)};
    return m;
}

Ipv4Address lan(int n) { return Ipv4Address::from_octets(192, 168, 1, static_cast<std::uint8_t>(n)); }

InstalledAppDef installed(std::uint32_t uid, std::string_view id, std::string_view signer) {
    return {uid, std::string(id), std::string(signer)};
}

PhoneDef phone_def(std::string name, int n, bool mcn = false) {
    PhoneDef p;
    p.name = std::move(name);
    p.mac = mac(1, n);
    p.ip = lan(100 + n);
    p.password = p.name + "-secret";
    p.mcn = mcn;
    return p;
}

PhoneDef alice() {
    auto p = phone_def("alice", 0, true);
    p.apps = {installed(10061, kWemo, "belkin"), installed(10064, kBrowser, "google")};
    return p;
}

PhoneDef bob() {
    auto p = phone_def("bob", 1);
    p.apps = {installed(10061, kWemo, "belkin"), installed(10062, kMynerd, "mynerd"),
              installed(10063, kEvil, "evil"), installed(10064, kBrowser, "google")};
    return p;
}

PhoneDef carol(std::string_view wemo_signer) {
    auto p = phone_def("carol", 2);
    p.apps = {installed(10071, kWemo, wemo_signer), installed(10074, kBrowser, "google")};
    return p;
}

PhoneDef mallory() {
    auto p = phone_def("mallory", 3);
    p.apps = {installed(10084, kBrowser, "google")};
    return p;
}

PhoneDef dave_ios() {
    auto p = phone_def("dave", 4);
    p.platform = Platform::Ios;
    p.apps = {installed(501, kWemo, "belkin"), installed(502, kSafari, "apple")};
    return p;
}

PhoneDef eve() {
    auto p = phone_def("eve", 50);
    p.registered = false;
    p.apps = {installed(10094, kBrowser, "google")};
    return p;
}

const std::vector<std::string> kWemoDevices{"wemo-switch", "wemo-motion", "wemo-insight"};
const std::vector<std::string> kProtected{"wemo-switch", "wemo-motion", "wemo-insight", "mynerd-plug"};

TopologyDef home(std::vector<PhoneDef> phones) {
    TopologyDef t;
    t.router_mac = mac(0, 1);
    t.phones = std::move(phones);
    t.devices = {
        {"wemo-switch", mac(2, 0), lan(20), true},
        {"wemo-motion", mac(2, 1), lan(21), true},
        {"wemo-insight", mac(2, 2), lan(22), true},
        {"mynerd-plug", mac(2, 3), lan(23), true},
        {"lan-pc", mac(3, 0), lan(50), false},
    };
    t.hosts = {{"cloud", Ipv4Address::from_octets(52, 1, 2, 3)}, {"other", Ipv4Address::from_octets(52, 9, 9, 9)}};
    AppDef wemo{std::string(kWemo), "belkin", {}};
    for (const auto& d : kWemoDevices) wemo.bindings.emplace_back(d, "wemo");
    AppDef mynerd{std::string(kMynerd), "mynerd", {{"mynerd-plug", "mynerd"}}};
    t.apps = {wemo, mynerd};
    return t;
}

FlowSpec flow(std::string label, std::string phone, std::string_view app, std::string dst, std::int64_t start_ms) {
    FlowSpec f;
    f.label = std::move(label);
    f.phone = std::move(phone);
    f.app_id = std::string(app);
    f.dst = std::move(dst);
    f.start_ms = start_ms;
    return f;
}

ActionSpec action(std::int64_t at_ms, ActionKind kind, std::string label) {
    ActionSpec a;
    a.at_ms = at_ms;
    a.kind = kind;
    a.label = std::move(label);
    return a;
}

void official_flows(Scenario& sc, std::int64_t start) {
    for (const auto& d : kWemoDevices) sc.flows.push_back(flow("official", "bob", kWemo, d, start));
    sc.flows.push_back(flow("official", "bob", kMynerd, "mynerd-plug", start));
}

Scenario s1() {
    Scenario sc;
    sc.name = "S1";
    sc.description = "unauthorized app on an authorized phone";
    sc.topology = home({alice(), bob()});
    official_flows(sc, 100);
    for (const auto& d : kProtected) sc.flows.push_back(flow("attacker", "bob", kEvil, d, 100));
    sc.params.modes = {false, true};
    return sc;
}

Scenario s2() {
    Scenario sc;
    sc.name = "S2";
    sc.description = "repackaged app with a forged identity";
    sc.topology = home({alice(), bob(), carol("repackager")});
    for (const auto& d : kWemoDevices) {
        sc.flows.push_back(flow("official", "bob", kWemo, d, 100));
        sc.flows.push_back(flow("repackaged", "carol", kWemo, d, 100));
    }
    sc.params.modes = {false, true};
    return sc;
}

Scenario s3() {
    Scenario sc;
    sc.name = "S3";
    sc.description = "guest phone access";
    sc.topology = home({alice(), bob(), eve()});
    official_flows(sc, 100);
    for (const auto& d : kProtected) sc.flows.push_back(flow("guest", "eve", kBrowser, d, 100));
    auto web = flow("guest-internet", "eve", kBrowser, "cloud", 100);
    web.dst_port = 443;
    sc.flows.push_back(web);

    auto forged = action(500, ActionKind::ForgeDecision, "forged");
    forged.phone = "eve";
    forged.dst = "wemo-switch";
    forged.app_id = std::string(kWemo);
    sc.actions.push_back(forged);
    return sc;
}

Scenario s4() {
    Scenario sc;
    sc.name = "S4";
    sc.description = "compromised phone: policy tamper, forged decision, decision cache flood";
    sc.topology = home({alice(), bob(), mallory()});
    for (const auto& d : {"wemo-switch", "mynerd-plug"}) {
        auto f = flow("benign", "bob", std::string_view(d) == "wemo-switch" ? kWemo : kMynerd, d, 100);
        f.exchanges = 10;
        f.gap_ms = 500;
        f.lifetime_ms = 10000;
        sc.flows.push_back(f);
    }
    auto snap = [&](std::int64_t at, std::string label) {
        auto a = action(at, ActionKind::Snapshot, std::move(label));
        a.phone = "bob";
        sc.actions.push_back(a);
    };
    snap(1000, "bob_before");

    auto tamper = action(1100, ActionKind::Tamper, "tamper");
    tamper.phone = "mallory";
    sc.actions.push_back(tamper);

    auto forged = action(1200, ActionKind::ForgeDecision, "forged_foreign_ip");
    forged.phone = "mallory";
    forged.dst = "wemo-switch";
    forged.app_id = std::string(kWemo);
    forged.ip = lan(101);  // bob's reserved address
    sc.actions.push_back(forged);

    auto flood = action(1300, ActionKind::Flood, "flood");
    flood.phone = "mallory";
    flood.dst = "wemo-insight";
    flood.app_id = std::string(kWemo);
    sc.actions.push_back(flood);

    snap(2000, "bob_after");

    auto probe = action(2100, ActionKind::Probe, "probe_during_penalty");
    probe.phone = "mallory";
    probe.dst = "wemo-switch";
    sc.actions.push_back(probe);
    sc.flows.push_back(flow("attacker", "mallory", kBrowser, "wemo-motion", 2200));

    auto after = action(1300 + 1000, ActionKind::Probe, "probe_after_penalty");
    after.phone = "mallory";
    after.dst = "wemo-switch";
    after.after_penalty = true;
    sc.actions.push_back(after);

    sc.variants = {Variant{"flood", {}}, Variant{"boundary", {{"flood_excess", "0"}}}};
    return sc;
}

Scenario s5() {
    Scenario sc;
    sc.name = "S5";
    sc.description = "decision latency across polling intervals";
    sc.topology = home({alice(), bob()});
    auto f = flow("latency", "bob", kWemo, "wemo-switch", 1000);
    f.align_poll = true;
    f.send_delay_ms = 0;
    sc.flows.push_back(f);
    sc.params.poll_sweep = {10, 30, 100};
    sc.params.trials = 10;
    return sc;
}

Scenario s6() {
    Scenario sc;
    sc.name = "S6";
    sc.description = "detection accuracy for short-lived echo flows";
    sc.topology = home({alice(), bob()});
    for (auto [label, proto, start] :
         {std::tuple{"tcp-echo", Protocol::Tcp, 1000}, std::tuple{"udp-echo", Protocol::Udp, 2000}}) {
        auto f = flow(label, "bob", kBrowser, "lan-pc", start);
        f.protocol = proto;
        f.dst_port = 7;
        f.random_phase = true;
        f.send_delay_ms = 0;
        f.lifetime_ms = -1;  // flow_lifetime_ms
        sc.flows.push_back(f);
    }
    sc.params.poll_sweep = {10, 30, 100, 150};
    sc.params.trials = 10;
    return sc;
}

Scenario s7() {
    Scenario sc;
    sc.name = "S7";
    sc.description = "partitioned monitor, policy update and stale decision replay";
    sc.topology = home({alice(), bob(), carol("belkin")});
    auto f = flow("carol", "carol", kWemo, "wemo-switch", 100);
    f.lifetime_ms = 500;
    sc.flows.push_back(f);

    auto on = [&](std::int64_t at, ActionKind kind, std::string label, std::string phone) {
        auto a = action(at, kind, std::move(label));
        a.phone = std::move(phone);
        sc.actions.push_back(a);
    };
    on(400, ActionKind::Capture, "captured", "carol");
    on(1000, ActionKind::Partition, "partition", "carol");
    auto upd = action(1100, ActionKind::McnUpdate, "update");
    upd.phone = "alice";
    upd.update = policy::PolicyUpdate{{policy::change::Bind{std::string(kMynerd), mac(2, 0), "lights"}}};
    sc.actions.push_back(upd);
    on(1200, ActionKind::Replay, "replay_partitioned", "carol");
    on(1300, ActionKind::Snapshot, "carol_partitioned", "carol");
    on(2000, ActionKind::Heal, "heal", "carol");
    on(2100, ActionKind::Snapshot, "carol_healed", "carol");
    on(2100, ActionKind::Snapshot, "bob_synced", "bob");
    on(2200, ActionKind::Replay, "replay_healed", "carol");
    return sc;
}

Scenario s8() {
    Scenario sc;
    sc.name = "S8";
    sc.description = "remote adversary against the port-restricted cone NAT";
    sc.topology = home({alice(), bob()});
    auto out = action(100, ActionKind::DeviceOutbound, "outbound");
    out.dst = "wemo-switch";
    out.host = "cloud";
    out.port = 443;
    out.local_port = 49152;
    sc.actions.push_back(out);
    auto in = [&](std::int64_t at, std::string label, std::string host, std::uint16_t port, std::string dev) {
        auto a = action(at, ActionKind::WanInbound, std::move(label));
        a.host = std::move(host);
        a.port = port;
        a.dst = std::move(dev);
        a.local_port = 49152;
        sc.actions.push_back(a);
    };
    in(200, "inbound_contacted", "cloud", 443, "wemo-switch");
    in(300, "inbound_other_port", "cloud", 444, "wemo-switch");
    in(400, "inbound_other_host", "other", 443, "wemo-switch");
    in(500, "inbound_uncontacted_device", "cloud", 443, "wemo-motion");
    sc.params.modes = {false, true};
    return sc;
}

Scenario s9() {
    Scenario sc;
    sc.name = "S9";
    sc.description = "IP and MAC spoofing";
    sc.topology = home({alice(), bob(), eve()});
    auto spoof = [&](std::int64_t at, std::string label, MacAddress m, Ipv4Address ip) {
        auto a = action(at, ActionKind::Spoof, std::move(label));
        a.mac = m;
        a.ip = ip;
        a.dst = "lan-pc";
        sc.actions.push_back(a);
    };
    spoof(100, "ip_spoof", mac(1, 50), lan(101));
    spoof(200, "mac_spoof", mac(1, 1), lan(151));
    spoof(300, "device_ip_spoof", mac(1, 50), lan(20));
    spoof(400, "consistent", mac(1, 50), lan(150));
    sc.params.modes = {false, true};
    return sc;
}

Scenario s10() {
    Scenario sc;
    sc.name = "S10";
    sc.description = "round-trip overhead for managed and unmanaged apps";
    sc.topology = home({alice(), bob(), dave_ios()});
    auto add = [&](std::string label, std::string phone, std::string_view app, std::string dst) {
        auto f = flow(std::move(label), std::move(phone), app, std::move(dst), 100);
        f.exchanges = 5;
        f.gap_ms = 20;
        f.send_delay_ms = 250;
        f.latency_key = 1;
        sc.flows.push_back(f);
    };
    add("tunnel-managed", "dave", kWemo, "wemo-switch");
    add("procfs-managed", "bob", kWemo, "wemo-insight");
    add("unmanaged", "bob", kBrowser, "lan-pc");
    add("unmanaged-ios", "dave", kSafari, "lan-pc");
    sc.params.modes = {true, false};
    sc.params.trials = 10;
    return sc;
}

}  // namespace

const std::vector<std::string>& builtin_names() {
    static const std::vector<std::string> names{"S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8", "S9", "S10"};
    return names;
}

Scenario builtin_scenario(std::string_view name) {
    Scenario sc;
    if (name == "S1") sc = s1();
    else if (name == "S2") sc = s2();
    else if (name == "S3") sc = s3();
    else if (name == "S4") sc = s4();
    else if (name == "S5") sc = s5();
    else if (name == "S6") sc = s6();
    else if (name == "S7") sc = s7();
    else if (name == "S8") sc = s8();
    else if (name == "S9") sc = s9();
    else if (name == "S10") sc = s10();
    else throw ScenarioError("unknown scenario '" + std::string(name) + "'");
    sc.profile = sc.name;
    return sc;
}

// ── Scenario files ───────────────────────────────────────────────────────────

namespace {

FlowSpec parse_flow(const policy::RecordLine& line) {
    policy::FieldReader r(line);
    FlowSpec f;
    f.label = r.required("label");
    f.phone = r.required("phone");
    f.app_id = r.required("app");
    f.dst = r.required("dst");
    auto num = [&](std::string_view key) -> std::optional<std::int64_t> {
        auto v = r.optional(key);
        if (!v) return std::nullopt;
        try {
            return parse_int(key, *v);
        } catch (const ScenarioError& e) {
            r.fail(e.what());
        }
    };
    if (auto v = num("port")) {
        if (*v < 0 || *v > 65535) r.fail("port out of range");
        f.dst_port = static_cast<std::uint16_t>(*v);
    }
    if (auto v = num("src_port")) {
        if (*v < 1 || *v > 65535) r.fail("src_port out of range");
        f.src_port = static_cast<std::uint16_t>(*v);
    }
    if (auto p = r.optional("proto")) {
        if (*p == "tcp") f.protocol = Protocol::Tcp;
        else if (*p == "udp") f.protocol = Protocol::Udp;
        else r.fail("proto must be tcp or udp");
    }
    f.start_ms = num("start").value_or(0);
    if (auto l = r.optional("lifetime")) {
        if (*l == "param") f.lifetime_ms = -1;
        else if (auto v = num("lifetime")) f.lifetime_ms = *v;
    }
    f.exchanges = num("exchanges").value_or(1);
    f.gap_ms = num("gap").value_or(10);
    f.send_delay_ms = num("send_delay");
    f.align_poll = r.flag("align_poll", false);
    f.random_phase = r.flag("random_phase", false);
    if (auto v = num("latency_key")) f.latency_key = static_cast<std::uint64_t>(*v);
    r.finish();
    return f;
}

}  // namespace

std::vector<Scenario> parse_scenario_file(std::string_view text) {
    std::vector<Scenario> out;
    for (const auto& line : policy::tokenize_records(text)) {
        if (line.kind == "scenario") {
            policy::FieldReader r(line);
            const auto name = r.required("name");
            const auto base = r.required("base");
            const auto flows = r.optional("flows").value_or("keep");
            r.finish();
            Scenario sc;
            try {
                sc = builtin_scenario(base);
            } catch (const ScenarioError& e) {
                throw policy::TextFormatError(line.number, e.what());
            }
            sc.name = name;
            if (flows == "replace")
                sc.flows.clear();
            else if (flows != "keep")
                throw policy::TextFormatError(line.number, "flows must be keep or replace");
            out.push_back(std::move(sc));
            continue;
        }
        if (out.empty()) throw policy::TextFormatError(line.number, "'" + line.kind + "' before any scenario line");
        auto& sc = out.back();
        if (line.kind == "param") {
            if (!line.name.empty()) throw policy::TextFormatError(line.number, "param takes key=value tokens only");
            for (const auto& [k, v] : line.fields) {
                try {
                    sc.params.set(k, v);
                } catch (const ScenarioError& e) {
                    throw policy::TextFormatError(line.number, e.what());
                }
            }
        } else if (line.kind == "flow") {
            sc.flows.push_back(parse_flow(line));
        } else {
            throw policy::TextFormatError(line.number, "unknown record '" + line.kind + "'");
        }
    }
    return out;
}

}  // namespace hanguard::sim
