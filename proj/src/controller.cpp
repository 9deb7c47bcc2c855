#include "hanguard/controller.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <system_error>

#include "hanguard/policy_text.hpp"

namespace hanguard::controller {

using proto::ControlMessage;
using proto::Flag;
using proto::MessageType;

std::string_view to_string(Reason r) {
    switch (r) {
        case Reason::NotInteresting: return "NotInteresting";
        case Reason::Valid: return "Valid";
        case Reason::NoDecision: return "NoDecision";
        case Reason::PhoneLevelDeny: return "PhoneLevelDeny";
        case Reason::Penalized: return "Penalized";
        case Reason::SpoofSuspected: return "SpoofSuspected";
        case Reason::NatBlocked: return "NatBlocked";
    }
    return "?";
}

std::string_view to_string(IntakeStatus s) {
    switch (s) {
        case IntakeStatus::Queued: return "Queued";
        case IntakeStatus::Malformed: return "Malformed";
        case IntakeStatus::WrongType: return "WrongType";
        case IntakeStatus::Penalized: return "Penalized";
        case IntakeStatus::UnknownPhone: return "UnknownPhone";
        case IntakeStatus::BadCredentials: return "BadCredentials";
        case IntakeStatus::CertMismatch: return "CertMismatch";
        case IntakeStatus::StaleVersion: return "StaleVersion";
        case IntakeStatus::SpoofSuspected: return "SpoofSuspected";
    }
    return "?";
}

// ── Notification log ─────────────────────────────────────────────────────────

void NotificationLog::notify_admin(SimTime time, std::string event, std::string detail) {
    records_.push_back({time, std::string(kAdminChannel), std::move(event), std::move(detail)});
}

void NotificationLog::log(SimTime time, std::string component, std::string event, std::string detail) {
    records_.push_back({time, std::move(component), std::move(event), std::move(detail)});
}

std::size_t NotificationLog::admin_count() const {
    return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(),
                                                  [](const Record& r) { return r.component == kAdminChannel; }));
}

std::size_t NotificationLog::count(std::string_view event) const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [&](const Record& r) { return r.event == event; }));
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string NotificationLog::to_csv() const {
    std::string out = "time,component,event,detail\n";
    for (const auto& r : records_) {
        out += std::to_string(r.time.count()) + ',' + csv_field(r.component) + ',' + csv_field(r.event) + ',' +
               csv_field(r.detail) + '\n';
    }
    return out;
}

// ── PFDC ─────────────────────────────────────────────────────────────────────

bool Pfdc::upsert(const PfdcEntry& entry) {
    auto it = entries_.find(entry.flow);
    if (it == entries_.end()) {
        entries_.emplace(entry.flow, entry);
        by_age_.emplace(entry.last_seen, entry.flow);
        by_phone_[entry.owner_phone].emplace(entry.last_seen, entry.flow);
        return true;
    }
    auto& cur = it->second;
    const AgeKey old_key{cur.last_seen, cur.flow};
    by_age_.erase(old_key);
    by_phone_[cur.owner_phone].erase(old_key);

    const auto last_seen = std::max(cur.last_seen, entry.last_seen);
    cur = entry;
    cur.last_seen = last_seen;
    by_age_.emplace(cur.last_seen, cur.flow);
    by_phone_[cur.owner_phone].emplace(cur.last_seen, cur.flow);
    return false;
}

void Pfdc::evict(const FlowId& flow) {
    auto it = entries_.find(flow);
    if (it == entries_.end()) return;
    const AgeKey key{it->second.last_seen, flow};
    by_age_.erase(key);
    auto ph = by_phone_.find(it->second.owner_phone);
    if (ph != by_phone_.end()) {
        ph->second.erase(key);
        if (ph->second.empty()) by_phone_.erase(ph);
    }
    entries_.erase(it);
}

bool Pfdc::erase(const FlowId& flow) {
    if (!entries_.contains(flow)) return false;
    evict(flow);
    return true;
}

const PfdcEntry* Pfdc::find(const FlowId& flow) const {
    auto it = entries_.find(flow);
    return it == entries_.end() ? nullptr : &it->second;
}

void Pfdc::touch(const FlowId& flow, SimTime now) {
    auto it = entries_.find(flow);
    if (it == entries_.end() || now <= it->second.last_seen) return;
    auto entry = it->second;
    entry.last_seen = now;
    upsert(entry);
}

std::vector<FlowId> Pfdc::gc_run() {
    std::vector<FlowId> evicted;
    std::vector<MacAddress> over;
    for (const auto& [phone, ages] : by_phone_)
        if (ages.size() > per_phone_limit_) over.push_back(phone);
    for (const auto& phone : over) {
        while (true) {
            auto ph = by_phone_.find(phone);
            if (ph == by_phone_.end() || ph->second.size() <= per_phone_limit_) break;
            const auto victim = ph->second.begin()->second;
            evict(victim);
            evicted.push_back(victim);
        }
    }
    while (entries_.size() > capacity_) {
        const auto victim = by_age_.begin()->second;
        evict(victim);
        evicted.push_back(victim);
    }
    return evicted;
}

std::size_t Pfdc::count_for(MacAddress phone) const {
    auto it = by_phone_.find(phone);
    return it == by_phone_.end() ? 0 : it->second.size();
}

std::set<FlowId> Pfdc::flows_of(MacAddress phone) const {
    std::set<FlowId> out;
    if (auto it = by_phone_.find(phone); it != by_phone_.end())
        for (const auto& [age, flow] : it->second) out.insert(flow);
    return out;
}

// ── Rate limiting ────────────────────────────────────────────────────────────

bool PenaltyBox::is_penalized(MacAddress phone, SimTime now) const {
    auto it = until_.find(phone);
    return it != until_.end() && now < it->second;
}

std::optional<SimTime> PenaltyBox::penalty_until(MacAddress phone) const {
    auto it = until_.find(phone);
    if (it == until_.end()) return std::nullopt;
    return it->second;
}

std::size_t RateLimiter::in_window(MacAddress phone, SimTime now) {
    auto& q = inserts_[phone];
    while (!q.empty() && q.front() <= now - window_) q.pop_front();
    return q.size();
}

bool RateLimiter::record(MacAddress phone, SimTime now) {
    const auto n = in_window(phone, now);
    inserts_[phone].push_back(now);
    return n + 1 > threshold_;
}

// ── NAT / spoofing ───────────────────────────────────────────────────────────

Verdict nat_filter(const Packet& inbound, const NatTable& nat) {
    const auto remote_ip = inbound.flow.src_ip.to_v4();
    const auto local_ip = inbound.flow.dst_ip.to_v4();
    if (!remote_ip || !local_ip) return Verdict::drop(Reason::NatBlocked);
    const SocketAddr remote{*remote_ip, inbound.flow.src_port};
    const SocketAddr local{*local_ip, inbound.flow.dst_port};
    return nat.admits(remote, local) ? Verdict::forward(Reason::NotInteresting) : Verdict::drop(Reason::NatBlocked);
}

std::optional<std::string> spoof_check(MacAddress src_mac, Ipv4Address src_ip, const policy::Policy& policy) {
    if (const auto* phone = policy.find_phone(src_mac); phone && phone->reserved_ip != src_ip)
        return src_mac.to_string() + " claims " + src_ip.to_string() + ", reserved " + phone->reserved_ip.to_string();
    if (const auto* dev = policy.find_device(src_mac); dev && dev->ip != src_ip)
        return src_mac.to_string() + " claims " + src_ip.to_string() + ", reserved " + dev->ip.to_string();
    for (const auto& [mac, phone] : policy.phones)
        if (phone.reserved_ip == src_ip && mac != src_mac)
            return src_mac.to_string() + " claims " + src_ip.to_string() + " reserved for " + mac.to_string();
    if (const auto* dev = policy.find_device_by_ip(src_ip); dev && dev->mac != src_mac)
        return src_mac.to_string() + " claims " + src_ip.to_string() + " reserved for " + dev->mac.to_string();
    return std::nullopt;
}

// ── Persistence ──────────────────────────────────────────────────────────────

bool MemoryPolicyStore::persist(const policy::Policy& policy) {
    if (fail_next_) {
        fail_next_ = false;
        return false;
    }
    text_ = policy::format_policy(policy);
    return true;
}

bool FilePolicyStore::persist(const policy::Policy& policy) {
    auto tmp = path_;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) return false;
        out << policy::format_policy(policy);
        out.flush();
        if (!out) return false;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path_, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        return false;
    }
    return true;
}

// ── Controller ───────────────────────────────────────────────────────────────

namespace {

constexpr std::string_view kComponent = "controller";

IntakeStatus intake_status(proto::AuthResult r) {
    switch (r) {
        case proto::AuthResult::Ok: return IntakeStatus::Queued;
        case proto::AuthResult::UnknownPhone: return IntakeStatus::UnknownPhone;
        case proto::AuthResult::BadCredentials: return IntakeStatus::BadCredentials;
        case proto::AuthResult::CertMismatch: return IntakeStatus::CertMismatch;
        case proto::AuthResult::StaleVersion: return IntakeStatus::StaleVersion;
    }
    return IntakeStatus::Malformed;
}

}  // namespace

Controller::Controller(ControllerConfig config, policy::Policy policy, std::shared_ptr<PolicyStore> store)
    : config_(config),
      policy_(std::move(policy)),
      store_(std::move(store)),
      pfdc_(config.pfdc_capacity, config.per_phone_limit),
      limiter_(config.rate_window, config.rate_threshold) {}

Verdict Controller::count(Verdict v) {
    ++stats_.verdicts[v.reason];
    return v;
}

IntakeStatus Controller::receive_decision(std::span<const std::uint8_t> frame, std::string_view channel_cert,
                                          SimTime now) {
    auto reject = [&](IntakeStatus s, const std::string& detail) {
        ++stats_.decisions_rejected;
        log_.notify_admin(now, "decision-rejected", std::string(to_string(s)) + " " + detail);
        return s;
    };

    auto decoded = proto::decode(frame);
    if (const auto* bad = std::get_if<proto::Malformed>(&decoded))
        return reject(IntakeStatus::Malformed, "offset " + std::to_string(bad->offset) + ": " + bad->reason);
    auto& msg = std::get<ControlMessage>(decoded);
    const auto who = msg.phone_mac.to_string();
    if (msg.msg_type != MessageType::FlowDecision) return reject(IntakeStatus::WrongType, who);

    const auto auth = proto::authenticate(msg, channel_cert, policy_);
    if (auth != proto::AuthResult::Ok) return reject(intake_status(auth), who + " " + msg.flow.to_string());

    if (penalty_.is_penalized(msg.phone_mac, now)) return reject(IntakeStatus::Penalized, who);

    // A Monitor may only speak for flows sourced from its own reserved address.
    const auto* phone = policy_.find_phone(msg.phone_mac);
    const auto src = msg.flow.src_ip.to_v4();
    if (!src || *src != phone->reserved_ip)
        return reject(IntakeStatus::SpoofSuspected, who + " " + msg.flow.to_string());

    queue_.push_back(std::move(msg));
    return IntakeStatus::Queued;
}

bool Controller::rate_limit(MacAddress phone, SimTime now) {
    if (!limiter_.record(phone, now)) return false;
    if (penalty_.is_penalized(phone, now)) return false;
    penalty_.penalize(phone, now + config_.penalty_duration);
    log_.notify_admin(now, "penalty",
                      phone.to_string() + " exceeded " + std::to_string(config_.rate_threshold) +
                          " inserts; until " + std::to_string((now + config_.penalty_duration).count()));
    return true;
}

std::vector<AppliedDecision> Controller::drain_decisions(SimTime now) {
    std::vector<AppliedDecision> applied;
    while (!queue_.empty()) {
        auto msg = std::move(queue_.front());
        queue_.pop_front();
        AppliedDecision a{msg.flow, msg.flag, msg.phone_mac, false, false, {}};
        if (msg.flag == Flag::Validate) {
            a.inserted = pfdc_.upsert(PfdcEntry{msg.flow, msg.flag, msg.app_id, now, msg.phone_mac});
            if (a.inserted) {
                ++stats_.pfdc_inserts;
                a.penalized = rate_limit(msg.phone_mac, now);
                a.evicted = pfdc_.gc_run();
            }
        } else {
            pfdc_.erase(msg.flow);
        }
        ++stats_.decisions_applied;
        applied.push_back(std::move(a));
    }
    return applied;
}

Verdict Controller::enforce(const Packet& packet, SimTime now) {
    if (penalty_.is_penalized(packet.src_mac, now)) return count(Verdict::drop(Reason::Penalized));
    if (config_.vanilla) return count(Verdict::forward(Reason::NotInteresting));

    const auto* device = policy_.find_device(packet.dst_mac);
    if (!device || !device->is_protected) return count(Verdict::forward(Reason::NotInteresting));

    if (!policy::te_check(policy_, policy_.role_of(packet.src_mac), packet.dst_mac))
        return count(Verdict::drop(Reason::PhoneLevelDeny));

    ++stats_.pfdc_lookups;
    const auto* entry = pfdc_.find(packet.flow);
    if (!entry || entry->flag != Flag::Validate) return count(Verdict::drop(Reason::NoDecision));
    pfdc_.touch(packet.flow, now);
    return count(Verdict::forward(Reason::Valid));
}

Verdict Controller::ingress_lan(const Packet& packet, SimTime now, bool wan_bound) {
    if (!config_.vanilla) {
        const auto src = packet.flow.src_ip.to_v4();
        std::optional<std::string> spoof;
        if (src) spoof = spoof_check(packet.src_mac, *src, policy_);
        if (spoof) {
            log_.notify_admin(now, "spoof", *spoof);
            return count(Verdict::drop(Reason::SpoofSuspected));
        }
    }
    auto v = enforce(packet, now);
    if (v.forwarded() && wan_bound) {
        const auto local = packet.flow.src_ip.to_v4();
        const auto remote = packet.flow.dst_ip.to_v4();
        if (local && remote)
            nat_.record_outbound({*local, packet.flow.src_port}, {*remote, packet.flow.dst_port});
    }
    return v;
}

Verdict Controller::ingress_wan(const Packet& packet, SimTime /*now*/) {
    if (config_.vanilla) return count(Verdict::forward(Reason::NotInteresting));
    return count(nat_filter(packet, nat_));
}

UpdateServiceResult Controller::policy_update_service(const policy::PolicyUpdate& update, MacAddress actor,
                                                      SimTime now, std::span<PolicyPushTarget* const> reachable) {
    auto result = policy::apply_update(policy_, update, actor);
    if (auto* rej = std::get_if<policy::UpdateRejection>(&result)) {
        const auto kind = rej->kind == policy::RejectionKind::Unauthorized ? UpdateFailure::Kind::Unauthorized
                                                                           : UpdateFailure::Kind::Invalid;
        log_.notify_admin(now, "policy-update-rejected", actor.to_string() + ": " + rej->reason);
        return UpdateFailure{kind, rej->reason};
    }
    auto next = std::get<policy::Policy>(std::move(result));
    if (store_ && !store_->persist(next)) {
        log_.notify_admin(now, "persist-failed", "version " + std::to_string(next.version));
        return UpdateFailure{UpdateFailure::Kind::Persistence, "persistent storage write failed"};
    }
    policy_ = std::move(next);
    log_.log(now, std::string(kComponent), "policy-updated",
             "version " + std::to_string(policy_.version) + " by " + actor.to_string());

    ControlMessage push;
    push.msg_type = MessageType::PolicyPush;
    push.policy_version = policy_.version;
    push.body = policy::format_policy(policy_);
    for (auto* target : reachable) {
        if (!target || target->phone() == actor) continue;
        push.phone_mac = target->phone();
        target->deliver_policy_push(proto::encode(push));
    }
    return policy_.version;
}

std::vector<std::uint8_t> Controller::ack(MacAddress to, bool ok) const {
    ControlMessage m;
    m.msg_type = MessageType::Ack;
    m.phone_mac = to;
    m.policy_version = policy_.version;
    m.flag = ok ? Flag::Validate : Flag::Invalidate;
    return proto::encode(m);
}

std::vector<std::uint8_t> Controller::handle_sync_frame(std::span<const std::uint8_t> frame,
                                                        std::string_view channel_cert, SimTime now,
                                                        std::span<PolicyPushTarget* const> reachable) {
    auto decoded = proto::decode(frame);
    if (const auto* bad = std::get_if<proto::Malformed>(&decoded)) {
        log_.notify_admin(now, "sync-rejected", "Malformed at offset " + std::to_string(bad->offset));
        return ack(MacAddress{}, false);
    }
    const auto& msg = std::get<ControlMessage>(decoded);
    const auto who = msg.phone_mac.to_string();

    auto refuse = [&](std::string_view why) {
        log_.notify_admin(now, "sync-rejected", std::string(why) + " " + who);
        return ack(msg.phone_mac, false);
    };

    switch (msg.msg_type) {
        case MessageType::VersionQuery: {
            const auto auth = proto::authenticate_identity(msg, channel_cert, policy_);
            if (auth != proto::AuthResult::Ok) return refuse(proto::to_string(auth));
            return ack(msg.phone_mac, true);
        }
        case MessageType::PolicyPush: {
            const auto auth = proto::authenticate_identity(msg, channel_cert, policy_);
            if (auth != proto::AuthResult::Ok) return refuse(proto::to_string(auth));
            ControlMessage reply;
            reply.msg_type = MessageType::PolicyPush;
            reply.phone_mac = msg.phone_mac;
            reply.policy_version = policy_.version;
            reply.body = policy::format_policy(policy_);
            return proto::encode(reply);
        }
        case MessageType::PolicyUpdate: {
            const auto auth = proto::authenticate(msg, channel_cert, policy_);
            if (auth != proto::AuthResult::Ok) return refuse(proto::to_string(auth));
            policy::PolicyUpdate update;
            try {
                update = policy::parse_update(msg.body);
            } catch (const ParseError& e) {
                return refuse(std::string("unparsable update: ") + e.what());
            }
            auto r = policy_update_service(update, msg.phone_mac, now, reachable);
            return ack(msg.phone_mac, std::holds_alternative<std::uint64_t>(r));
        }
        default:
            return refuse("unexpected message type");
    }
}

}  // namespace hanguard::controller
