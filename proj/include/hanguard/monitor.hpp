#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hanguard/control_proto.hpp"
#include "hanguard/net_types.hpp"
#include "hanguard/policy.hpp"
#include "hanguard/procfs.hpp"

// Phone-side Monitor: finds flows opened by apps, checks them against the local policy
// replica and tells the router which flows may pass.
namespace hanguard::monitor {

enum class Strategy { Naive, Smarter };

std::string_view to_string(Strategy s);

struct ProcfsPoll {
    SimTime interval{10'000};
    Strategy strategy = Strategy::Smarter;
};

struct TunnelProxy {
    std::set<std::string> managed_apps;
    SimTime hop_latency{1'500};
};

using SituationSource = std::variant<ProcfsPoll, TunnelProxy>;

enum class NodeRole { Mcn, Scn };

enum class FlowEvent { Opened, Closed };

struct FlowObservation {
    FlowId flow;
    std::string app_id;
    Digest32 app_sig{};
    FlowEvent event = FlowEvent::Opened;
    SimTime observed_at{0};
};

// What the phone's package manager reports for an installed package.
struct InstalledApp {
    std::string app_id;
    Digest32 signature{};
};

struct PollStats {
    SimTime scheduled_interval{0};
    std::vector<SimTime> actual_intervals;
    std::uint64_t lines_parsed = 0;
    std::uint64_t polls = 0;
    std::uint64_t parse_errors = 0;
};

struct Alert {
    SimTime at{0};
    FlowId flow;
    std::string app_id;
    std::string reason;
};

struct MonitorConfig {
    MacAddress phone_mac;
    Digest32 credential_hash{};
    std::string cert_id;
    NodeRole node = NodeRole::Scn;
    SituationSource source = ProcfsPoll{};
    SimTime udp_idle_timeout{2'000'000};
};

// Request/response over the authenticated control channel. Returns nullopt when the
// router cannot be reached.
class RouterLink {
public:
    virtual ~RouterLink() = default;
    virtual std::optional<std::vector<std::uint8_t>> exchange(std::span<const std::uint8_t> frame) = 0;
};

struct SyncOutcome {
    enum class Kind { Unreachable, UpToDate, Updated, Failed };
    Kind kind = Kind::Unreachable;
    std::uint64_t version = 0;
    std::vector<proto::ControlMessage> invalidations;
};

enum class PushError { NotMaster, Unreachable, Rejected, ProtocolError };

struct PushFailure {
    PushError error;
    std::string detail;
};

using PushResult = std::variant<std::uint64_t, PushFailure>;

enum class Direction { Outbound, Inbound };

struct ProxyResult {
    bool tunneled = false;
    Packet packet;
    SimTime added_latency{0};
    std::optional<proto::ControlMessage> message;
};

struct KnownFlow {
    std::string app_id;
    Digest32 app_sig{};
    MacAddress device;
    SimTime last_seen{0};
};

bool verify_app_identity(std::string_view app_id, const Digest32& app_sig,
                         const policy::Policy& policy);

class Monitor {
public:
    Monitor(MonitorConfig config, policy::Policy replica, std::map<std::uint32_t, InstalledApp> packages);

    // ProcfsPoll only. Never throws on a bad line; the line is counted and skipped.
    std::vector<FlowObservation> poll_once(const procfs::ProcNet& files, SimTime now);

    std::optional<proto::ControlMessage> evaluate_flow(const FlowObservation& obs);

    std::vector<proto::ControlMessage> detect_termination(std::span<const FlowObservation> observations,
                                                          SimTime now);

    SyncOutcome on_network_change(RouterLink& link);

    PushResult mcn_push_update(const policy::PolicyUpdate& update, RouterLink& link);

    // TunnelProxy only. Packets of unmanaged apps never enter the tunnel.
    ProxyResult proxy_packet(const Packet& packet, std::string_view app_id, Direction dir, SimTime now);

    // Invalidations produced by a successful mcn_push_update, waiting to be sent.
    std::vector<proto::ControlMessage> take_outbox();

    // Installs a pushed policy if it is newer than the replica.
    std::vector<proto::ControlMessage> on_policy_push(const proto::ControlMessage& push);

    const policy::Policy& replica() const { return replica_; }
    std::uint64_t replica_version() const { return replica_.version; }
    const MonitorConfig& config() const { return config_; }
    NodeRole node() const { return config_.node; }
    const PollStats& poll_stats() const { return poll_stats_; }
    const std::vector<Alert>& alerts() const { return alerts_; }
    const std::map<FlowId, KnownFlow>& known_flows() const { return known_flows_; }

private:
    struct TrackedFlow {
        std::string app_id;
        Digest32 app_sig{};
        procfs::FileKind file = procfs::FileKind::Tcp;
        bool closed = false;
    };

    proto::ControlMessage make_message(proto::MessageType type) const;
    proto::ControlMessage flow_message(const FlowId& flow, const std::string& app_id,
                                       const Digest32& sig, proto::Flag flag) const;
    std::vector<proto::ControlMessage> install_replica(policy::Policy next);
    const InstalledApp* package_by_id(std::string_view app_id) const;

    MonitorConfig config_;
    policy::Policy replica_;
    std::map<std::uint32_t, InstalledApp> packages_;

    std::map<FlowId, KnownFlow> known_flows_;
    std::map<FlowId, TrackedFlow> tracked_;
    std::set<FlowId> tunnel_seen_;
    std::array<std::optional<SimTime>, 4> last_mtime_{};
    std::optional<SimTime> last_poll_;
    PollStats poll_stats_;
    std::vector<Alert> alerts_;
    std::vector<proto::ControlMessage> outbox_;
};

}  // namespace hanguard::monitor
