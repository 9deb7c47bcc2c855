#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hanguard/monitor.hpp"
#include "hanguard/net_types.hpp"
#include "hanguard/policy.hpp"

namespace hanguard::sim {

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ── Parameters ───────────────────────────────────────────────────────────────

// Every field is settable by name through set(); times in the names say their unit.
struct SimParams {
    std::int64_t data_link_us = 1000;
    std::int64_t data_jitter_us = 300;
    std::int64_t control_link_us = 900;
    std::int64_t control_jitter_us = 300;
    std::int64_t lan_us = 200;
    std::int64_t lan_jitter_us = 50;
    std::int64_t wan_us = 20000;
    std::int64_t wan_jitter_us = 2000;
    std::int64_t host_processing_us = 100;
    std::int64_t tunnel_hop_us = 1500;
    std::int64_t parse_cost_us = 2;  // per procfs line
    std::int64_t decision_apply_us = 50;

    std::int64_t tcp_rto_ms = 200;
    std::int64_t max_retries = 3;
    std::int64_t time_wait_ms = 1000;
    std::int64_t udp_idle_ms = 2000;
    std::int64_t housekeeping_ms = 250;
    std::int64_t settle_ms = 3000;

    std::int64_t poll_ms = 10;
    monitor::Strategy strategy = monitor::Strategy::Smarter;
    std::int64_t flow_lifetime_ms = 40;
    std::int64_t send_delay_ms = 50;
    std::int64_t background_sockets = 6;

    std::int64_t pfdc_capacity = 1024;
    std::int64_t per_phone_limit = 64;
    std::int64_t rate_window_ms = 10000;
    std::int64_t rate_threshold = 100;
    std::int64_t penalty_ms = 300000;
    std::int64_t flood_excess = 1;  // flood size is rate_threshold + flood_excess

    std::int64_t trials = 1;
    std::vector<std::int64_t> poll_sweep;  // empty: just poll_ms
    std::vector<bool> modes{false};        // vanilla flags to run

    void set(std::string_view key, std::string_view value);
    std::string get(std::string_view key) const;
    static const std::vector<std::string>& keys();
};

// ── Topology ─────────────────────────────────────────────────────────────────

enum class Platform { Android, Ios };

struct InstalledAppDef {
    std::uint32_t uid = 0;
    std::string app_id;
    std::string signer;  // signature is sha256 of this string
};

struct PhoneDef {
    std::string name;
    MacAddress mac;
    Ipv4Address ip;
    std::string password;
    bool registered = true;  // false: unknown to the router, treated as Guest
    bool mcn = false;
    std::optional<std::string> role;
    Platform platform = Platform::Android;
    std::vector<InstalledAppDef> apps;
};

struct DeviceDef {
    std::string name;
    MacAddress mac;
    Ipv4Address ip;
    bool is_protected = true;
};

struct HostDef {
    std::string name;
    Ipv4Address ip;
};

struct AppDef {
    std::string app_id;
    std::string signer;
    std::vector<std::pair<std::string, std::string>> bindings;  // (device name, category)
};

struct TopologyDef {
    MacAddress router_mac;
    std::vector<PhoneDef> phones;
    std::vector<DeviceDef> devices;
    std::vector<HostDef> hosts;
    std::vector<AppDef> apps;
};

Digest32 signature_of(std::string_view signer);
std::string cert_of(const PhoneDef& phone);
policy::Policy build_policy(const TopologyDef& topo);

// ── Scripts ──────────────────────────────────────────────────────────────────

struct FlowSpec {
    std::string label;   // class name in metrics
    std::string phone;
    std::string app_id;  // must be installed on the phone
    std::string dst;     // device or host name
    std::uint16_t dst_port = 80;
    Protocol protocol = Protocol::Tcp;
    std::int64_t start_ms = 0;
    std::optional<std::int64_t> lifetime_ms;    // unset: close after last exchange; negative: flow_lifetime_ms
    std::int64_t exchanges = 1;
    std::int64_t gap_ms = 10;
    std::optional<std::int64_t> send_delay_ms;  // unset: param send_delay_ms
    bool align_poll = false;                    // open exactly on the first poll tick >= start
    bool random_phase = false;                  // start += U{0 .. poll_ms-1} ms
    std::optional<std::uint64_t> latency_key;   // flows sharing a key share link draws
    std::optional<std::uint16_t> src_port;
};

enum class ActionKind {
    Partition,
    Heal,
    McnUpdate,
    Tamper,
    ForgeDecision,
    Flood,
    Capture,
    Replay,
    Spoof,
    DeviceOutbound,
    WanInbound,
    Probe,
    Snapshot,
};

struct ActionSpec {
    std::int64_t at_ms = 0;
    ActionKind kind = ActionKind::Probe;
    std::string label;  // outcome name in metrics
    std::string phone;
    std::string dst;
    std::string host;
    std::string app_id;
    std::uint16_t port = 0;        // remote port
    std::uint16_t local_port = 0;  // device-side port for NAT actions
    bool after_penalty = false;    // at_ms counts from the end of the penalty period
    std::optional<MacAddress> mac;
    std::optional<Ipv4Address> ip;
    std::optional<policy::PolicyUpdate> update;
};

struct Variant {
    std::string name;
    std::vector<std::pair<std::string, std::string>> overrides;
};

struct Scenario {
    std::string name;
    std::string profile;  // built-in whose checks apply
    std::string description;
    TopologyDef topology;
    SimParams params;
    std::vector<FlowSpec> flows;
    std::vector<ActionSpec> actions;
    std::vector<Variant> variants{Variant{"base", {}}};
};

// Unresolved references, one message each; empty when the scenario is runnable.
std::vector<std::string> validate_scenario(const Scenario& sc);

const std::vector<std::string>& builtin_names();
Scenario builtin_scenario(std::string_view name);

// Scenario parameter file. Sections start with `scenario name=<n> base=<S#>`; following
// `param <key>=<value>...` and `flow ...` lines apply to that section.
std::vector<Scenario> parse_scenario_file(std::string_view text);

}  // namespace hanguard::sim
