#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hanguard/control_proto.hpp"
#include "hanguard/net_types.hpp"
#include "hanguard/policy.hpp"

// Router-side enforcement. Phone-level checks use the master policy; app-level checks use
// the per-flow decision cache (PFDC) filled by Monitors over the control channel.
namespace hanguard::controller {

enum class Action { Forward, Drop };

enum class Reason { NotInteresting, Valid, NoDecision, PhoneLevelDeny, Penalized, SpoofSuspected, NatBlocked };

inline constexpr std::array<Reason, 7> kAllReasons{Reason::NotInteresting, Reason::Valid,
                                                   Reason::NoDecision,     Reason::PhoneLevelDeny,
                                                   Reason::Penalized,      Reason::SpoofSuspected,
                                                   Reason::NatBlocked};

std::string_view to_string(Reason r);

struct Verdict {
    Action action = Action::Drop;
    Reason reason = Reason::NoDecision;

    static Verdict forward(Reason r) { return {Action::Forward, r}; }
    static Verdict drop(Reason r) { return {Action::Drop, r}; }
    bool forwarded() const { return action == Action::Forward; }
    bool operator==(const Verdict&) const = default;
};

struct ControllerConfig {
    std::size_t pfdc_capacity = 1024;
    std::size_t per_phone_limit = 64;
    SimTime rate_window{10'000'000};
    std::size_t rate_threshold = 100;
    SimTime penalty_duration{300'000'000};
    bool vanilla = false;  // baseline router: Hanguard checks off
};

// ── Notification log ─────────────────────────────────────────────────────────

class NotificationLog {
public:
    static constexpr std::string_view kAdminChannel = "admin";

    struct Record {
        SimTime time{0};
        std::string component;
        std::string event;
        std::string detail;
    };

    // Out-of-band admin notification; recorded on the distinguished "admin" channel.
    void notify_admin(SimTime time, std::string event, std::string detail);
    void log(SimTime time, std::string component, std::string event, std::string detail);

    const std::vector<Record>& records() const { return records_; }
    std::size_t admin_count() const;
    std::size_t count(std::string_view event) const;
    std::string to_csv() const;  // time,component,event,detail

private:
    std::vector<Record> records_;
};

// ── Per-flow decision cache ──────────────────────────────────────────────────

struct PfdcEntry {
    FlowId flow;
    proto::Flag flag = proto::Flag::Validate;
    std::string requesting_app;
    SimTime last_seen{0};
    MacAddress owner_phone;
};

class Pfdc {
public:
    Pfdc(std::size_t capacity, std::size_t per_phone_limit)
        : capacity_(capacity), per_phone_limit_(per_phone_limit) {}

    // Returns true when a new entry was created, false on refresh of an existing one.
    bool upsert(const PfdcEntry& entry);
    bool erase(const FlowId& flow);
    const PfdcEntry* find(const FlowId& flow) const;
    void touch(const FlowId& flow, SimTime now);

    // Evicts oldest-last-seen entries (ties by FlowId) until every per-phone limit and the
    // global capacity hold. Per-phone limits are enforced first.
    std::vector<FlowId> gc_run();

    std::size_t size() const { return entries_.size(); }
    std::size_t count_for(MacAddress phone) const;
    std::set<FlowId> flows_of(MacAddress phone) const;
    const std::map<FlowId, PfdcEntry>& entries() const { return entries_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t per_phone_limit() const { return per_phone_limit_; }

private:
    using AgeKey = std::pair<SimTime, FlowId>;

    void evict(const FlowId& flow);

    std::size_t capacity_;
    std::size_t per_phone_limit_;
    std::map<FlowId, PfdcEntry> entries_;
    std::set<AgeKey> by_age_;
    std::map<MacAddress, std::set<AgeKey>> by_phone_;
};

// ── Rate limiting ────────────────────────────────────────────────────────────

class PenaltyBox {
public:
    void penalize(MacAddress phone, SimTime until) { until_[phone] = until; }
    bool is_penalized(MacAddress phone, SimTime now) const;
    std::optional<SimTime> penalty_until(MacAddress phone) const;

private:
    std::map<MacAddress, SimTime> until_;
};

// Sliding window of accepted inserts per phone. Exceeding the threshold (strictly more
// inserts than `threshold` inside `window`) trips the limiter.
class RateLimiter {
public:
    RateLimiter(SimTime window, std::size_t threshold) : window_(window), threshold_(threshold) {}

    // Records one insert; returns true when the phone is now over the threshold.
    bool record(MacAddress phone, SimTime now);
    void reset(MacAddress phone) { inserts_.erase(phone); }
    std::size_t in_window(MacAddress phone, SimTime now);

private:
    SimTime window_;
    std::size_t threshold_;
    std::map<MacAddress, std::deque<SimTime>> inserts_;
};

// ── NAT ──────────────────────────────────────────────────────────────────────

struct SocketAddr {
    Ipv4Address ip;
    std::uint16_t port = 0;

    auto operator<=>(const SocketAddr&) const = default;
};

// Port-restricted cone: inbound is admitted only from a remote ip:port that the local
// endpoint contacted before.
class NatTable {
public:
    void record_outbound(SocketAddr local, SocketAddr remote) { pairs_.emplace(local, remote); }
    bool admits(SocketAddr remote, SocketAddr local) const { return pairs_.contains({local, remote}); }
    std::size_t size() const { return pairs_.size(); }

private:
    std::set<std::pair<SocketAddr, SocketAddr>> pairs_;
};

Verdict nat_filter(const Packet& inbound, const NatTable& nat);

// Mismatch between a claimed (MAC, IP) pair and the static reservations. Returns a
// description of the mismatch, or nullopt when the pair is consistent or unreserved.
std::optional<std::string> spoof_check(MacAddress src_mac, Ipv4Address src_ip, const policy::Policy& policy);

// ── Persistence ──────────────────────────────────────────────────────────────

class PolicyStore {
public:
    virtual ~PolicyStore() = default;
    // Durable write of the whole policy; false on failure.
    virtual bool persist(const policy::Policy& policy) = 0;
};

class MemoryPolicyStore : public PolicyStore {
public:
    bool persist(const policy::Policy& policy) override;
    void fail_next(bool fail) { fail_next_ = fail; }
    const std::string& text() const { return text_; }

private:
    bool fail_next_ = false;
    std::string text_;
};

// Writes `<path>.tmp` then renames over `path`.
class FilePolicyStore : public PolicyStore {
public:
    explicit FilePolicyStore(std::filesystem::path path) : path_(std::move(path)) {}
    bool persist(const policy::Policy& policy) override;

private:
    std::filesystem::path path_;
};

// ── Controller ───────────────────────────────────────────────────────────────

enum class IntakeStatus {
    Queued,
    Malformed,
    WrongType,
    Penalized,
    UnknownPhone,
    BadCredentials,
    CertMismatch,
    StaleVersion,
    SpoofSuspected,
};

std::string_view to_string(IntakeStatus s);

struct AppliedDecision {
    FlowId flow;
    proto::Flag flag = proto::Flag::Validate;
    MacAddress owner;
    bool inserted = false;  // new PFDC entry (Validate only)
    bool penalized = false; // this insert tripped the rate limiter
    std::vector<FlowId> evicted;
};

struct ControllerStats {
    std::uint64_t pfdc_lookups = 0;
    std::uint64_t pfdc_inserts = 0;
    std::uint64_t decisions_applied = 0;
    std::uint64_t decisions_rejected = 0;
    std::map<Reason, std::uint64_t> verdicts;
};

// A Monitor that can receive policy pushes from the router.
class PolicyPushTarget {
public:
    virtual ~PolicyPushTarget() = default;
    virtual MacAddress phone() const = 0;
    virtual void deliver_policy_push(std::span<const std::uint8_t> frame) = 0;
};

struct UpdateFailure {
    enum class Kind { Unauthorized, Invalid, Stale, Persistence };
    Kind kind;
    std::string reason;
};

using UpdateServiceResult = std::variant<std::uint64_t, UpdateFailure>;

class Controller {
public:
    Controller(ControllerConfig config, policy::Policy policy, std::shared_ptr<PolicyStore> store);

    // decode -> authenticate -> enqueue. Rejections notify the admin and leave the PFDC alone.
    IntakeStatus receive_decision(std::span<const std::uint8_t> frame, std::string_view channel_cert,
                                  SimTime now);
    std::size_t pending_decisions() const { return queue_.size(); }
    // Applies queued decisions in arrival order.
    std::vector<AppliedDecision> drain_decisions(SimTime now);

    // Penalty box, interesting-flow test, phone-level, app-level; in that order.
    Verdict enforce(const Packet& packet, SimTime now);

    // LAN ingress: spoof check, then enforce(). Forwarded packets bound for the WAN open a
    // NAT pair.
    Verdict ingress_lan(const Packet& packet, SimTime now, bool wan_bound = false);
    // WAN ingress: NAT filter only.
    Verdict ingress_wan(const Packet& packet, SimTime now);

    // Returns true when the phone was penalized by this insert.
    bool rate_limit(MacAddress phone, SimTime now);
    std::vector<FlowId> gc_run() { return pfdc_.gc_run(); }

    UpdateServiceResult policy_update_service(const policy::PolicyUpdate& update, MacAddress actor,
                                              SimTime now, std::span<PolicyPushTarget* const> reachable);

    // VersionQuery, policy pull and PolicyUpdate over the request/response channel.
    std::vector<std::uint8_t> handle_sync_frame(std::span<const std::uint8_t> frame,
                                                std::string_view channel_cert, SimTime now,
                                                std::span<PolicyPushTarget* const> reachable);

    const policy::Policy& policy() const { return policy_; }
    const Pfdc& pfdc() const { return pfdc_; }
    const PenaltyBox& penalty_box() const { return penalty_; }
    const NatTable& nat() const { return nat_; }
    const NotificationLog& log() const { return log_; }
    NotificationLog& log() { return log_; }
    const ControllerStats& stats() const { return stats_; }
    const ControllerConfig& config() const { return config_; }

private:
    Verdict count(Verdict v);
    std::vector<std::uint8_t> ack(MacAddress to, bool ok) const;

    ControllerConfig config_;
    policy::Policy policy_;
    std::shared_ptr<PolicyStore> store_;
    Pfdc pfdc_;
    PenaltyBox penalty_;
    RateLimiter limiter_;
    NatTable nat_;
    NotificationLog log_;
    std::deque<proto::ControlMessage> queue_;
    ControllerStats stats_;
};

}  // namespace hanguard::controller
