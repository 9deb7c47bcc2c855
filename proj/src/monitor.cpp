#include "hanguard/monitor.hpp"

#include <stdexcept>
#include <utility>

#include "hanguard/policy_text.hpp"

namespace hanguard::monitor {

using proto::ControlMessage;
using proto::Flag;
using proto::MessageType;

std::string_view to_string(Strategy s) { return s == Strategy::Naive ? "naive" : "smarter"; }

bool verify_app_identity(std::string_view app_id, const Digest32& app_sig,
                         const policy::Policy& policy) {
    const auto* app = policy.find_app(app_id);
    return app && app->signature == app_sig;
}

Monitor::Monitor(MonitorConfig config, policy::Policy replica,
                 std::map<std::uint32_t, InstalledApp> packages)
    : config_(std::move(config)), replica_(std::move(replica)), packages_(std::move(packages)) {
    if (const auto* poll = std::get_if<ProcfsPoll>(&config_.source)) {
        if (poll->interval <= SimTime{0}) throw std::invalid_argument("poll interval must be > 0");
        poll_stats_.scheduled_interval = poll->interval;
    }
}

const InstalledApp* Monitor::package_by_id(std::string_view app_id) const {
    for (const auto& [uid, app] : packages_)
        if (app.app_id == app_id) return &app;
    return nullptr;
}

// ── Detection ────────────────────────────────────────────────────────────────

std::vector<FlowObservation> Monitor::poll_once(const procfs::ProcNet& files, SimTime now) {
    const auto* poll = std::get_if<ProcfsPoll>(&config_.source);
    if (!poll) throw std::logic_error("poll_once on a tunnel-proxy Monitor");

    if (last_poll_) poll_stats_.actual_intervals.push_back(now - *last_poll_);
    last_poll_ = now;
    ++poll_stats_.polls;

    std::vector<FlowObservation> out;
    for (auto kind : procfs::kAllFiles) {
        const auto& file = files.file(kind);
        auto& last = last_mtime_[static_cast<std::size_t>(kind)];
        const bool unchanged = last && *last == file.mtime();
        last = file.mtime();

        if (poll->strategy == Strategy::Smarter && unchanged) {
            // Same content as last time: every tracked flow of this file is still there.
            for (const auto& [flow, t] : tracked_)
                if (t.file == kind && !t.closed)
                    if (auto k = known_flows_.find(flow); k != known_flows_.end()) k->second.last_seen = now;
            continue;
        }

        const auto proto =
            (kind == procfs::FileKind::Tcp || kind == procfs::FileKind::Tcp6) ? Protocol::Tcp : Protocol::Udp;
        std::set<FlowId> present;
        for (const auto& text : file.lines()) {
            ++poll_stats_.lines_parsed;
            procfs::ProcNetLine line;
            try {
                line = procfs::parse_line(text);
            } catch (const ParseError&) {
                ++poll_stats_.parse_errors;
                continue;
            }
            if (line.remote.port == 0) continue;  // listening or unconnected
            auto pkg = packages_.find(line.uid);
            if (pkg == packages_.end()) continue;  // no attribution, not an app socket

            const FlowId flow{line.local.addr, line.local.port, line.remote.addr, line.remote.port, proto};
            present.insert(flow);
            const bool closing = procfs::is_closing(line.state);
            auto it = tracked_.find(flow);
            if (it == tracked_.end()) {
                if (line.state != static_cast<std::uint8_t>(procfs::SocketState::Established)) continue;
                tracked_.emplace(flow, TrackedFlow{pkg->second.app_id, pkg->second.signature, kind, false});
                out.push_back({flow, pkg->second.app_id, pkg->second.signature, FlowEvent::Opened, now});
            } else if (closing && !it->second.closed) {
                it->second.closed = true;
                out.push_back({flow, it->second.app_id, it->second.app_sig, FlowEvent::Closed, now});
            }
            if (!closing)
                if (auto k = known_flows_.find(flow); k != known_flows_.end()) k->second.last_seen = now;
        }

        for (auto it = tracked_.begin(); it != tracked_.end();) {
            if (it->second.file == kind && !present.contains(it->first)) {
                if (!it->second.closed)
                    out.push_back({it->first, it->second.app_id, it->second.app_sig, FlowEvent::Closed, now});
                it = tracked_.erase(it);
            } else {
                ++it;
            }
        }
    }
    return out;
}

ControlMessage Monitor::make_message(MessageType type) const {
    ControlMessage m;
    m.msg_type = type;
    m.credential_hash = config_.credential_hash;
    m.phone_mac = config_.phone_mac;
    m.policy_version = replica_.version;
    return m;
}

ControlMessage Monitor::flow_message(const FlowId& flow, const std::string& app_id, const Digest32& sig,
                                     Flag flag) const {
    auto m = make_message(MessageType::FlowDecision);
    m.flow = flow;
    m.app_id = app_id;
    m.app_sig = sig;
    m.flag = flag;
    return m;
}

std::optional<ControlMessage> Monitor::evaluate_flow(const FlowObservation& obs) {
    if (obs.event != FlowEvent::Opened) return std::nullopt;
    const auto dst = obs.flow.dst_ip.to_v4();
    const auto* device = dst ? replica_.find_device_by_ip(*dst) : nullptr;
    if (!device || !device->is_protected) return std::nullopt;

    auto alert = [&](std::string reason) {
        alerts_.push_back({obs.observed_at, obs.flow, obs.app_id, std::move(reason)});
        return std::nullopt;
    };

    const auto role = replica_.role_of(config_.phone_mac);
    bool te = false;
    try {
        te = policy::te_check(replica_, role, device->mac);
    } catch (const policy::LookupError&) {
        te = false;
    }
    if (!te) return alert("phone role " + role + " may not reach " + device->mac.to_string());
    if (!verify_app_identity(obs.app_id, obs.app_sig, replica_))
        return alert(replica_.find_app(obs.app_id) ? "signature mismatch (repackaged app?)"
                                                   : "unregistered app");
    if (!policy::mcs_check(replica_, obs.app_id, device->mac))
        return alert("category mismatch with " + device->mac.to_string());

    known_flows_[obs.flow] = KnownFlow{obs.app_id, obs.app_sig, device->mac, obs.observed_at};
    return flow_message(obs.flow, obs.app_id, obs.app_sig, Flag::Validate);
}

std::vector<ControlMessage> Monitor::detect_termination(std::span<const FlowObservation> observations,
                                                        SimTime now) {
    std::vector<ControlMessage> out;
    for (const auto& obs : observations) {
        if (obs.event != FlowEvent::Closed || obs.flow.protocol != Protocol::Tcp) continue;
        auto it = known_flows_.find(obs.flow);
        if (it == known_flows_.end()) continue;
        out.push_back(flow_message(it->first, it->second.app_id, it->second.app_sig, Flag::Invalidate));
        known_flows_.erase(it);
    }
    for (auto it = known_flows_.begin(); it != known_flows_.end();) {
        if (it->first.protocol == Protocol::Udp && now - it->second.last_seen >= config_.udp_idle_timeout) {
            out.push_back(flow_message(it->first, it->second.app_id, it->second.app_sig, Flag::Invalidate));
            it = known_flows_.erase(it);
        } else {
            ++it;
        }
    }
    return out;
}

// ── Tunnel ───────────────────────────────────────────────────────────────────

ProxyResult Monitor::proxy_packet(const Packet& packet, std::string_view app_id, Direction dir, SimTime now) {
    const auto* tunnel = std::get_if<TunnelProxy>(&config_.source);
    if (!tunnel) throw std::logic_error("proxy_packet on a procfs Monitor");

    ProxyResult r;
    r.packet = packet;
    if (!tunnel->managed_apps.contains(std::string(app_id))) return r;
    r.tunneled = true;
    r.added_latency = tunnel->hop_latency;

    // Inbound packets carry the reversed 5-tuple; key everything by the outbound flow.
    FlowId flow = packet.flow;
    if (dir == Direction::Inbound) {
        std::swap(flow.src_ip, flow.dst_ip);
        std::swap(flow.src_port, flow.dst_port);
    }
    if (auto k = known_flows_.find(flow); k != known_flows_.end()) k->second.last_seen = now;
    if (dir == Direction::Inbound) return r;

    if (tunnel_seen_.insert(flow).second) {
        const auto* pkg = package_by_id(app_id);
        FlowObservation obs{flow, std::string(app_id), pkg ? pkg->signature : Digest32{}, FlowEvent::Opened, now};
        r.message = evaluate_flow(obs);
    } else if (packet.fin && flow.protocol == Protocol::Tcp) {
        FlowObservation obs{flow, std::string(app_id), {}, FlowEvent::Closed, now};
        auto msgs = detect_termination(std::span(&obs, 1), now);
        if (!msgs.empty()) r.message = msgs.front();
        tunnel_seen_.erase(flow);
    }
    return r;
}

// ── Policy synchronization ───────────────────────────────────────────────────

std::vector<ControlMessage> Monitor::take_outbox() { return std::exchange(outbox_, {}); }

std::vector<ControlMessage> Monitor::install_replica(policy::Policy next) {
    std::vector<ControlMessage> out;
    if (next.version <= replica_.version) return out;
    replica_ = std::move(next);

    // Flows validated under the old replica that the new one no longer allows.
    for (auto it = known_flows_.begin(); it != known_flows_.end();) {
        bool allowed = false;
        try {
            allowed = verify_app_identity(it->second.app_id, it->second.app_sig, replica_) &&
                      policy::authorize(replica_, config_.phone_mac, it->second.app_id, it->second.device) ==
                          policy::Decision::Allow;
        } catch (const policy::LookupError&) {
            allowed = false;
        }
        if (!allowed) {
            out.push_back(flow_message(it->first, it->second.app_id, it->second.app_sig, Flag::Invalidate));
            it = known_flows_.erase(it);
        } else {
            ++it;
        }
    }
    return out;
}

std::vector<ControlMessage> Monitor::on_policy_push(const ControlMessage& push) {
    if (push.msg_type != MessageType::PolicyPush) return {};
    try {
        return install_replica(policy::parse_policy(push.body));
    } catch (const ParseError&) {
        return {};
    }
}

SyncOutcome Monitor::on_network_change(RouterLink& link) {
    SyncOutcome outcome;
    outcome.version = replica_.version;

    auto reply_frame = link.exchange(proto::encode(make_message(MessageType::VersionQuery)));
    if (!reply_frame) return outcome;
    auto reply = proto::decode(*reply_frame);
    const auto* ack = std::get_if<ControlMessage>(&reply);
    if (!ack || ack->msg_type != MessageType::Ack || ack->flag != Flag::Validate) {
        outcome.kind = SyncOutcome::Kind::Failed;
        return outcome;
    }
    if (ack->policy_version <= replica_.version) {
        outcome.kind = SyncOutcome::Kind::UpToDate;
        return outcome;
    }

    auto push_frame = link.exchange(proto::encode(make_message(MessageType::PolicyPush)));
    if (!push_frame) return outcome;
    auto push = proto::decode(*push_frame);
    const auto* msg = std::get_if<ControlMessage>(&push);
    if (!msg || msg->msg_type != MessageType::PolicyPush) {
        outcome.kind = SyncOutcome::Kind::Failed;
        return outcome;
    }
    try {
        outcome.invalidations = install_replica(policy::parse_policy(msg->body));
    } catch (const ParseError&) {
        outcome.kind = SyncOutcome::Kind::Failed;
        return outcome;
    }
    outcome.kind = SyncOutcome::Kind::Updated;
    outcome.version = replica_.version;
    return outcome;
}

PushResult Monitor::mcn_push_update(const policy::PolicyUpdate& update, RouterLink& link) {
    if (config_.node != NodeRole::Mcn)
        return PushFailure{PushError::NotMaster, "policy updates are accepted only on the master node"};

    auto msg = make_message(MessageType::PolicyUpdate);
    msg.body = policy::format_update(update);
    auto reply_frame = link.exchange(proto::encode(msg));
    if (!reply_frame) return PushFailure{PushError::Unreachable, "router unreachable"};

    auto reply = proto::decode(*reply_frame);
    const auto* ack = std::get_if<ControlMessage>(&reply);
    if (!ack || ack->msg_type != MessageType::Ack)
        return PushFailure{PushError::ProtocolError, "unexpected reply to policy update"};
    if (ack->flag != Flag::Validate) return PushFailure{PushError::Rejected, "router rejected the update"};

    // Write-through: replay the same delta locally; fall back to a full pull if the result
    // does not land on the acknowledged version.
    auto local = policy::apply_update(replica_, update, config_.phone_mac);
    if (auto* next = std::get_if<policy::Policy>(&local); next && next->version == ack->policy_version) {
        auto inv = install_replica(std::move(*next));
        outbox_.insert(outbox_.end(), inv.begin(), inv.end());
    } else {
        auto sync = on_network_change(link);
        outbox_.insert(outbox_.end(), sync.invalidations.begin(), sync.invalidations.end());
        if (sync.kind != SyncOutcome::Kind::Updated && replica_.version != ack->policy_version)
            return PushFailure{PushError::ProtocolError, "could not fetch acknowledged policy"};
    }
    return replica_.version;
}

}  // namespace hanguard::monitor
