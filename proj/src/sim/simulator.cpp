#include "hanguard/sim/simulator.hpp"

#include <algorithm>
#include <memory>

#include "hanguard/control_proto.hpp"
#include "hanguard/controller.hpp"
#include "hanguard/crypto.hpp"
#include "hanguard/monitor.hpp"
#include "hanguard/policy_text.hpp"
#include "hanguard/procfs.hpp"
#include "hanguard/sim/event_queue.hpp"
#include "hanguard/sim/link_model.hpp"

namespace hanguard::sim {

namespace {

using controller::Reason;
using controller::Verdict;
using proto::ControlMessage;
using proto::MessageType;

// Link draw keys: (group, exchange, attempt, leg).
enum Leg : std::uint64_t {
    kUp = 0,       // phone -> router
    kOut = 1,      // router -> destination
    kBack = 2,     // destination -> router
    kDown = 3,     // router -> phone
    kCtrl = 4,     // Validate decision
    kCtrlInv = 5,  // Invalidate decision
    kMisc = 6,     // frames not tied to a scripted flow
    kPhase = 7,
    kPush = 8,
    kFin = 9,
};

constexpr std::uint64_t kMiscGroup = 1ULL << 40;
constexpr std::uint32_t kBackgroundUid = 1000;

std::string_view sync_kind(monitor::SyncOutcome::Kind k) {
    switch (k) {
        case monitor::SyncOutcome::Kind::Unreachable: return "Unreachable";
        case monitor::SyncOutcome::Kind::UpToDate: return "UpToDate";
        case monitor::SyncOutcome::Kind::Updated: return "Updated";
        case monitor::SyncOutcome::Kind::Failed: return "Failed";
    }
    return "?";
}

std::string_view push_error(monitor::PushError e) {
    switch (e) {
        case monitor::PushError::NotMaster: return "NotMaster";
        case monitor::PushError::Unreachable: return "Unreachable";
        case monitor::PushError::Rejected: return "Rejected";
        case monitor::PushError::ProtocolError: return "ProtocolError";
    }
    return "?";
}

FlowId reversed(const FlowId& f) { return FlowId{f.dst_ip, f.dst_port, f.src_ip, f.src_port, f.protocol}; }

class Simulation;

class PushAdapter : public controller::PolicyPushTarget {
public:
    PushAdapter(Simulation* sim, std::size_t phone) : sim_(sim), phone_(phone) {}
    MacAddress phone() const override;
    void deliver_policy_push(std::span<const std::uint8_t> frame) override;

private:
    Simulation* sim_;
    std::size_t phone_;
};

class SyncLink : public monitor::RouterLink {
public:
    SyncLink(Simulation* sim, std::size_t phone) : sim_(sim), phone_(phone) {}
    std::optional<std::vector<std::uint8_t>> exchange(std::span<const std::uint8_t> frame) override;

private:
    Simulation* sim_;
    std::size_t phone_;
};

struct PhoneRt {
    const PhoneDef* def = nullptr;
    std::string cert;
    Digest32 cred{};
    std::optional<monitor::Monitor> mon;
    bool tunnel = false;
    procfs::SocketTable kernel;
    bool reachable = true;
    SimTime last_ctrl{0};
    SimTime next_poll{0};
    std::array<SimTime, 4> polled_mtime{};
    bool polled_before = false;
    std::uint16_t next_port = 40000;
    std::uint64_t frames = 0;
    std::optional<std::vector<std::uint8_t>> last_decision;
    std::optional<std::vector<std::uint8_t>> captured;
    std::vector<std::size_t> aligned;
    std::unique_ptr<PushAdapter> push;
};

struct FlowRt {
    const FlowSpec* spec = nullptr;
    std::size_t phone = 0;
    std::uint32_t uid = 0;
    MacAddress l2_dst;  // device MAC, or the router for WAN hosts
    MacAddress dst_mac;
    bool wan = false;
    std::uint64_t key = 0;
    bool managed_tunnel = false;
    bool open = false;
    bool closed = false;
    bool established = false;
    bool valid_seen = false;
    bool invalidated = false;
    FlowRecord rec;
};

class Simulation {
public:
    Simulation(const Scenario& sc, const TrialSpec& trial);
    TrialReport run();

    // Used by the adapters.
    MacAddress phone_mac(std::size_t i) const { return phones_[i].def->mac; }
    void schedule_push(std::size_t phone, std::vector<std::uint8_t> frame);
    std::optional<std::vector<std::uint8_t>> sync_exchange(std::size_t phone, std::span<const std::uint8_t> frame);

private:
    SimTime now() const { return q_.now(); }
    SimTime ms(std::int64_t v) const { return from_ms(v); }
    void trace(const std::string& entity, std::string_view event, const std::string& detail);
    void violation(const std::string& what);

    std::size_t phone_index(const std::string& name) const;
    const DeviceDef* device(const std::string& name) const;
    const HostDef* host(const std::string& name) const;
    std::optional<std::size_t> phone_by_mac(MacAddress mac) const;

    void kernel_op(PhoneRt& ph, const std::function<void()>& op);
    void open_flow(std::size_t fi);
    void close_flow(std::size_t fi);
    void send_request(std::size_t fi, std::int64_t ex, std::int64_t attempt);
    void router_request(std::size_t fi, std::int64_t ex, std::int64_t attempt, SimTime sent_at);
    void router_response(std::size_t fi, std::int64_t ex, std::int64_t attempt, SimTime sent_at);
    void phone_response(std::size_t fi, std::int64_t ex, std::int64_t attempt, SimTime sent_at);
    void attempt_failed(std::size_t fi, std::int64_t ex, std::int64_t attempt, SimTime sent_at);
    void send_fin(std::size_t fi);

    void poll(std::size_t pi);
    void housekeeping(std::size_t pi);
    void send_control(std::size_t pi, std::vector<std::uint8_t> frame, SimTime at,
                      std::initializer_list<std::uint64_t> key, std::string label = {});
    void send_messages(std::size_t pi, const std::vector<ControlMessage>& msgs, SimTime at);
    void deliver_decision(std::size_t pi, const std::vector<std::uint8_t>& frame, const std::string& label);
    void drain();

    Verdict lan_ingress(const Packet& pkt, bool wan_bound);
    Verdict wan_ingress(const Packet& pkt);
    void record_verdict(const Packet& pkt, Verdict v);

    void run_action(const ActionSpec& a);
    ControlMessage identity_message(std::size_t pi, MessageType type) const;

    const Scenario& sc_;
    TrialSpec trial_;
    const SimParams& p_;
    LatencySampler sampler_;
    LinkModel data_, ctrl_link_, lan_, wan_;
    EventQueue q_;
    policy::Policy initial_policy_;
    std::unique_ptr<controller::Controller> router_;
    std::vector<PhoneRt> phones_;
    std::vector<FlowRt> flows_;
    std::map<FlowId, std::size_t> flow_by_id_;
    SimTime horizon_{0};
    TrialReport report_;
};

MacAddress PushAdapter::phone() const { return sim_->phone_mac(phone_); }

void PushAdapter::deliver_policy_push(std::span<const std::uint8_t> frame) {
    sim_->schedule_push(phone_, std::vector<std::uint8_t>(frame.begin(), frame.end()));
}

std::optional<std::vector<std::uint8_t>> SyncLink::exchange(std::span<const std::uint8_t> frame) {
    return sim_->sync_exchange(phone_, frame);
}

Simulation::Simulation(const Scenario& sc, const TrialSpec& trial)
    : sc_(sc),
      trial_(trial),
      p_(trial_.params),
      sampler_(trial.seed),
      data_{SimTime{p_.data_link_us}, SimTime{p_.data_jitter_us}},
      ctrl_link_{SimTime{p_.control_link_us}, SimTime{p_.control_jitter_us}},
      lan_{SimTime{p_.lan_us}, SimTime{p_.lan_jitter_us}},
      wan_{SimTime{p_.wan_us}, SimTime{p_.wan_jitter_us}},
      initial_policy_(build_policy(sc.topology)) {
    report_.index = trial.index;
    report_.repetition = trial.repetition;
    report_.variant = trial.variant;
    report_.vanilla = trial.vanilla;
    report_.poll_ms = p_.poll_ms;
    report_.seed = trial.seed;

    controller::ControllerConfig cfg;
    cfg.pfdc_capacity = static_cast<std::size_t>(p_.pfdc_capacity);
    cfg.per_phone_limit = static_cast<std::size_t>(p_.per_phone_limit);
    cfg.rate_window = ms(p_.rate_window_ms);
    cfg.rate_threshold = static_cast<std::size_t>(p_.rate_threshold);
    cfg.penalty_duration = ms(p_.penalty_ms);
    cfg.vanilla = trial.vanilla;
    router_ = std::make_unique<controller::Controller>(cfg, initial_policy_,
                                                       std::make_shared<controller::MemoryPolicyStore>());

    phones_.resize(sc.topology.phones.size());
    for (std::size_t i = 0; i < phones_.size(); ++i) {
        auto& ph = phones_[i];
        const auto& def = sc.topology.phones[i];
        ph.def = &def;
        ph.cert = cert_of(def);
        ph.cred = credential_hash(def.name, def.password);
        if (trial.vanilla || !def.registered) continue;

        std::map<std::uint32_t, monitor::InstalledApp> packages;
        std::set<std::string> managed;
        for (const auto& app : def.apps) {
            packages[app.uid] = {app.app_id, signature_of(app.signer)};
            if (initial_policy_.find_app(app.app_id)) managed.insert(app.app_id);
        }
        monitor::MonitorConfig mc;
        mc.phone_mac = def.mac;
        mc.credential_hash = ph.cred;
        mc.cert_id = ph.cert;
        mc.node = def.mcn ? monitor::NodeRole::Mcn : monitor::NodeRole::Scn;
        mc.udp_idle_timeout = ms(p_.udp_idle_ms);
        if (def.platform == Platform::Ios) {
            mc.source = monitor::TunnelProxy{managed, SimTime{p_.tunnel_hop_us}};
            ph.tunnel = true;
        } else {
            mc.source = monitor::ProcfsPoll{ms(p_.poll_ms), p_.strategy};
        }
        ph.mon.emplace(mc, initial_policy_, packages);
        ph.push = std::make_unique<PushAdapter>(this, i);
    }
}

void Simulation::trace(const std::string& entity, std::string_view event, const std::string& detail) {
    if (!trial_.trace) return;
    report_.trace.push_back(std::to_string(now().count()) + ',' + entity + ',' + std::string(event) + ',' + detail);
}

void Simulation::violation(const std::string& what) {
    report_.violations.push_back("t=" + std::to_string(now().count()) + "us: " + what);
}

std::size_t Simulation::phone_index(const std::string& name) const {
    for (std::size_t i = 0; i < phones_.size(); ++i)
        if (phones_[i].def->name == name) return i;
    throw ScenarioError("unknown phone " + name);
}

const DeviceDef* Simulation::device(const std::string& name) const {
    for (const auto& d : sc_.topology.devices)
        if (d.name == name) return &d;
    return nullptr;
}

const HostDef* Simulation::host(const std::string& name) const {
    for (const auto& h : sc_.topology.hosts)
        if (h.name == name) return &h;
    return nullptr;
}

std::optional<std::size_t> Simulation::phone_by_mac(MacAddress mac) const {
    for (std::size_t i = 0; i < phones_.size(); ++i)
        if (phones_[i].def->mac == mac) return i;
    return std::nullopt;
}

// ── Kernel and flows ─────────────────────────────────────────────────────────

void Simulation::kernel_op(PhoneRt& ph, const std::function<void()>& op) {
    std::array<std::vector<std::string>, 4> before;
    std::array<SimTime, 4> mtime{};
    for (auto k : procfs::kAllFiles) {
        before[static_cast<std::size_t>(k)] = ph.kernel.proc().file(k).lines();
        mtime[static_cast<std::size_t>(k)] = ph.kernel.proc().file(k).mtime();
    }
    op();
    for (auto k : procfs::kAllFiles) {
        const auto i = static_cast<std::size_t>(k);
        const auto& f = ph.kernel.proc().file(k);
        const bool changed = f.lines() != before[i];
        if (changed && f.mtime() != now())
            violation(ph.def->name + " " + std::string(procfs::file_name(k)) + " changed without an mtime update");
        if (!changed && f.mtime() != mtime[i])
            violation(ph.def->name + " " + std::string(procfs::file_name(k)) + " mtime moved without a change");
    }
}

void Simulation::open_flow(std::size_t fi) {
    auto& f = flows_[fi];
    if (f.open || f.closed) return;
    auto& ph = phones_[f.phone];
    f.open = true;
    f.rec.opened_at = now();
    kernel_op(ph, [&] { ph.kernel.open(f.rec.flow, f.uid, procfs::AddressForm::Mapped6, now()); });
    trace(ph.def->name, "flow-open", f.rec.flow.to_string() + " " + f.rec.app_id);

    const auto delay = ms(f.spec->send_delay_ms.value_or(p_.send_delay_ms));
    q_.schedule(now() + delay, EventKind::FlowAction, [this, fi] { send_request(fi, 0, 0); });
    if (f.spec->lifetime_ms) {
        const auto life = *f.spec->lifetime_ms < 0 ? p_.flow_lifetime_ms : *f.spec->lifetime_ms;
        q_.schedule(now() + ms(life), EventKind::FlowAction, [this, fi] { close_flow(fi); });
    }
}

void Simulation::close_flow(std::size_t fi) {
    auto& f = flows_[fi];
    if (f.closed) return;
    f.closed = true;
    f.rec.closed_at = now();
    if (!f.open) return;
    auto& ph = phones_[f.phone];
    trace(ph.def->name, "flow-close", f.rec.flow.to_string());
    if (f.rec.flow.protocol == Protocol::Tcp && f.established) {
        send_fin(fi);
        kernel_op(ph, [&] { ph.kernel.set_state(f.rec.flow, procfs::SocketState::TimeWait, now()); });
        const auto id = f.rec.flow;
        const auto pi = f.phone;
        q_.schedule(now() + ms(p_.time_wait_ms), EventKind::FlowAction, [this, pi, id] {
            auto& p = phones_[pi];
            kernel_op(p, [&] { p.kernel.close(id, now()); });
        });
    } else {
        kernel_op(ph, [&] { ph.kernel.close(f.rec.flow, now()); });
    }
}

void Simulation::send_fin(std::size_t fi) {
    auto& f = flows_[fi];
    auto& ph = phones_[f.phone];
    Packet pkt{ph.def->mac, f.l2_dst, f.rec.flow, true, 1};
    SimTime depart = now();
    if (f.managed_tunnel) {
        auto r = ph.mon->proxy_packet(pkt, f.rec.app_id, monitor::Direction::Outbound, now());
        depart += r.added_latency;
        if (r.message) send_control(f.phone, proto::encode(*r.message), now(), {f.key, 0, 0, kCtrlInv});
    }
    ++report_.packets_emitted;
    const auto at = depart + sampler_.draw(data_, {f.key, 0, 0, kFin});
    q_.schedule(at, EventKind::PacketArrival, [this, fi, pkt] {
        auto& fl = flows_[fi];
        const auto v = lan_ingress(pkt, fl.wan);
        if (!v.forwarded() && fl.valid_seen && !fl.invalidated) fl.rec.late_drop = true;
    });
}

void Simulation::send_request(std::size_t fi, std::int64_t ex, std::int64_t attempt) {
    auto& f = flows_[fi];
    if (f.closed) return;
    auto& ph = phones_[f.phone];
    const auto sent_at = now();
    Packet pkt{ph.def->mac, f.l2_dst, f.rec.flow, false, 1};
    SimTime depart = sent_at;
    if (f.managed_tunnel) {
        auto r = ph.mon->proxy_packet(pkt, f.rec.app_id, monitor::Direction::Outbound, now());
        depart += r.added_latency;
        if (r.message)
            send_control(f.phone, proto::encode(*r.message), now(),
                         {f.key, static_cast<std::uint64_t>(ex), static_cast<std::uint64_t>(attempt), kCtrl});
    }
    ++f.rec.attempts;
    ++report_.packets_emitted;
    const auto at = depart + sampler_.draw(data_, {f.key, static_cast<std::uint64_t>(ex),
                                                  static_cast<std::uint64_t>(attempt), kUp});
    q_.schedule(at, EventKind::PacketArrival,
                [this, fi, ex, attempt, sent_at] { router_request(fi, ex, attempt, sent_at); });
}

void Simulation::router_request(std::size_t fi, std::int64_t ex, std::int64_t attempt, SimTime sent_at) {
    auto& f = flows_[fi];
    auto& ph = phones_[f.phone];
    const Packet pkt{ph.def->mac, f.l2_dst, f.rec.flow, false, 1};
    if (!f.rec.first_arrival) f.rec.first_arrival = now();
    const auto v = lan_ingress(pkt, f.wan);
    ++f.rec.verdicts[v.reason];
    if (!v.forwarded()) {
        if (f.valid_seen && !f.invalidated) f.rec.late_drop = true;
        attempt_failed(fi, ex, attempt, sent_at);
        return;
    }
    if (v.reason == Reason::Valid) f.valid_seen = true;
    const auto& link = f.wan ? wan_ : lan_;
    const auto e = static_cast<std::uint64_t>(ex);
    const auto a = static_cast<std::uint64_t>(attempt);
    const auto reply_at = now() + sampler_.draw(link, {f.key, e, a, kOut}) + SimTime{p_.host_processing_us} +
                          sampler_.draw(link, {f.key, e, a, kBack});
    q_.schedule(reply_at, EventKind::PacketArrival,
                [this, fi, ex, attempt, sent_at] { router_response(fi, ex, attempt, sent_at); });
}

void Simulation::router_response(std::size_t fi, std::int64_t ex, std::int64_t attempt, SimTime sent_at) {
    auto& f = flows_[fi];
    auto& ph = phones_[f.phone];
    ++report_.packets_emitted;
    const Packet resp{f.l2_dst, ph.def->mac, reversed(f.rec.flow), false, 1};
    const auto v = f.wan ? wan_ingress(resp) : lan_ingress(resp, false);
    if (!v.forwarded()) {
        attempt_failed(fi, ex, attempt, sent_at);
        return;
    }
    const auto at = now() + sampler_.draw(data_, {f.key, static_cast<std::uint64_t>(ex),
                                                 static_cast<std::uint64_t>(attempt), kDown});
    q_.schedule(at, EventKind::PacketArrival,
                [this, fi, ex, attempt, sent_at] { phone_response(fi, ex, attempt, sent_at); });
}

void Simulation::phone_response(std::size_t fi, std::int64_t ex, std::int64_t attempt, SimTime sent_at) {
    auto& f = flows_[fi];
    auto& ph = phones_[f.phone];
    SimTime extra{0};
    if (f.managed_tunnel) {
        const Packet resp{f.l2_dst, ph.def->mac, reversed(f.rec.flow), false, 1};
        extra = ph.mon->proxy_packet(resp, f.rec.app_id, monitor::Direction::Inbound, now()).added_latency;
    }
    q_.schedule(now() + extra, EventKind::TimerFire, [this, fi, ex, sent_at] {
        auto& fl = flows_[fi];
        if (fl.closed) return;
        fl.rec.rtts.push_back(now() - sent_at);
        fl.rec.delivered = true;
        fl.established = true;
        if (ex + 1 < fl.spec->exchanges)
            q_.schedule(now() + ms(fl.spec->gap_ms), EventKind::FlowAction,
                        [this, fi, ex] { send_request(fi, ex + 1, 0); });
        else if (!fl.spec->lifetime_ms)
            close_flow(fi);
    });
    (void)attempt;
}

void Simulation::attempt_failed(std::size_t fi, std::int64_t ex, std::int64_t attempt, SimTime sent_at) {
    auto& f = flows_[fi];
    const auto retry_at = sent_at + ms(p_.tcp_rto_ms);
    if (attempt < p_.max_retries) {
        q_.schedule(retry_at, EventKind::FlowAction, [this, fi, ex, attempt] { send_request(fi, ex, attempt + 1); });
    } else {
        f.rec.gave_up = true;
        q_.schedule(retry_at, EventKind::FlowAction, [this, fi] { close_flow(fi); });
    }
}

// ── Router ingress ───────────────────────────────────────────────────────────

void Simulation::record_verdict(const Packet& pkt, Verdict v) {
    ++report_.verdicts[v.reason];
    if (v.forwarded())
        ++report_.packets_forwarded;
    else
        ++report_.packets_dropped;

    if (auto pi = phone_by_mac(pkt.src_mac)) {
        const auto& name = phones_[*pi].def->name;
        auto it = report_.penalty_start.find(name);
        if (it != report_.penalty_start.end() && now() >= it->second && now() < it->second + ms(p_.penalty_ms)) {
            ++report_.sent_in_penalty[name];
            if (!v.forwarded()) ++report_.dropped_in_penalty[name];
        }
    }
    trace("router", v.forwarded() ? "forward" : "drop",
          std::string(controller::to_string(v.reason)) + " " + pkt.flow.to_string());
}

Verdict Simulation::lan_ingress(const Packet& pkt, bool wan_bound) {
    const auto before = router_->stats().pfdc_lookups;
    const auto v = router_->ingress_lan(pkt, now(), wan_bound);
    const auto delta = static_cast<std::int64_t>(router_->stats().pfdc_lookups - before);
    report_.pfdc_lookups += delta;
    bool protected_dst = false;
    for (const auto& d : sc_.topology.devices)
        if (d.mac == pkt.dst_mac) protected_dst = d.is_protected;
    if (!protected_dst) report_.pfdc_lookups_unprotected += delta;
    record_verdict(pkt, v);
    return v;
}

Verdict Simulation::wan_ingress(const Packet& pkt) {
    const auto v = router_->ingress_wan(pkt, now());
    record_verdict(pkt, v);
    return v;
}

// ── Monitors and the control channel ─────────────────────────────────────────

void Simulation::poll(std::size_t pi) {
    auto& ph = phones_[pi];
    auto& mon = *ph.mon;

    std::vector<std::size_t> keep;
    for (auto fi : ph.aligned) {
        if (ms(flows_[fi].spec->start_ms) <= now())
            open_flow(fi);
        else
            keep.push_back(fi);
    }
    ph.aligned = std::move(keep);

    bool idle = ph.polled_before;
    for (auto k : procfs::kAllFiles) {
        const auto i = static_cast<std::size_t>(k);
        const auto m = ph.kernel.proc().file(k).mtime();
        if (!ph.polled_before || m != ph.polled_mtime[i]) idle = false;
        ph.polled_mtime[i] = m;
    }
    ph.polled_before = true;

    const auto before = mon.poll_stats().lines_parsed;
    const auto obs = mon.poll_once(ph.kernel.proc(), now());
    const auto lines = mon.poll_stats().lines_parsed - before;
    report_.lines_parsed += lines;
    report_.polls.push_back({now(), lines, idle});
    const auto done = now() + SimTime{p_.parse_cost_us * static_cast<std::int64_t>(lines)};

    for (const auto& o : obs) {
        auto it = flow_by_id_.find(o.flow);
        if (o.event == monitor::FlowEvent::Opened && it != flow_by_id_.end() && !flows_[it->second].rec.detected_at) {
            flows_[it->second].rec.detected_at = now();
            trace(ph.def->name, "detected", o.flow.to_string());
        }
        if (auto msg = mon.evaluate_flow(o)) {
            const auto key = it != flow_by_id_.end() ? flows_[it->second].key : kMiscGroup + pi;
            send_control(pi, proto::encode(*msg), done, {key, 0, 0, kCtrl});
        }
    }
    send_messages(pi, mon.detect_termination(obs, now()), done);

    ph.next_poll += ms(p_.poll_ms);
    const auto next = std::max(ph.next_poll, done);
    if (next <= horizon_) q_.schedule(next, EventKind::PollTick, [this, pi] { poll(pi); });
}

void Simulation::housekeeping(std::size_t pi) {
    auto& ph = phones_[pi];
    send_messages(pi, ph.mon->detect_termination({}, now()), now());
    const auto next = now() + ms(p_.housekeeping_ms);
    if (next <= horizon_) q_.schedule(next, EventKind::TimerFire, [this, pi] { housekeeping(pi); });
}

void Simulation::send_messages(std::size_t pi, const std::vector<ControlMessage>& msgs, SimTime at) {
    for (const auto& m : msgs) {
        auto it = flow_by_id_.find(m.flow);
        const auto key = it != flow_by_id_.end() ? flows_[it->second].key : kMiscGroup + pi;
        const auto leg = m.flag == proto::Flag::Validate ? kCtrl : kCtrlInv;
        send_control(pi, proto::encode(m), at, {key, 0, phones_[pi].frames, leg});
    }
}

void Simulation::send_control(std::size_t pi, std::vector<std::uint8_t> frame, SimTime at,
                              std::initializer_list<std::uint64_t> key, std::string label) {
    auto& ph = phones_[pi];
    ++report_.control_sent;
    ++ph.frames;
    if (!ph.reachable) {
        ++report_.control_lost;
        trace(ph.def->name, "control-lost", label);
        if (!label.empty()) report_.outcomes[label] = "Lost";
        return;
    }
    if (frame.size() > proto::kFrameHeaderSize &&
        frame[proto::kFrameHeaderSize] == static_cast<std::uint8_t>(MessageType::FlowDecision))
        ph.last_decision = frame;
    auto deliver = std::max(at + sampler_.draw(ctrl_link_, key), ph.last_ctrl);
    ph.last_ctrl = deliver;
    q_.schedule(deliver, EventKind::ControlDelivery, [this, pi, frame = std::move(frame), label] {
        deliver_decision(pi, frame, label);
    });
}

void Simulation::deliver_decision(std::size_t pi, const std::vector<std::uint8_t>& frame, const std::string& label) {
    const auto st = router_->receive_decision(frame, phones_[pi].cert, now());
    const std::string name(controller::to_string(st));
    ++report_.intake[name];
    if (!label.empty()) report_.outcomes[label] = name;
    trace("router", "decision", phones_[pi].def->name + " " + name);
    if (st == controller::IntakeStatus::Queued)
        q_.schedule(now() + SimTime{p_.decision_apply_us}, EventKind::TimerFire, [this] { drain(); });
}

void Simulation::drain() {
    for (const auto& a : router_->drain_decisions(now())) {
        auto it = flow_by_id_.find(a.flow);
        if (it != flow_by_id_.end()) {
            auto& f = flows_[it->second];
            if (a.flag == proto::Flag::Validate && !f.rec.decision_stored) f.rec.decision_stored = now();
            if (a.flag == proto::Flag::Invalidate) f.invalidated = true;
        }
        if (a.penalized) {
            ++report_.penalties;
            if (auto pi = phone_by_mac(a.owner)) {
                const auto& name = phones_[*pi].def->name;
                report_.penalty_start[name] = now();
                if (auto until = router_->penalty_box().penalty_until(a.owner)) report_.penalty_until[name] = *until;
            }
        }
    }
    const auto& pfdc = router_->pfdc();
    if (pfdc.size() > pfdc.capacity()) violation("PFDC over capacity");
    for (const auto& ph : phones_)
        if (pfdc.count_for(ph.def->mac) > pfdc.per_phone_limit())
            violation("PFDC per-phone limit exceeded by " + ph.def->name);
}

void Simulation::schedule_push(std::size_t pi, std::vector<std::uint8_t> frame) {
    const auto at = now() + sampler_.draw(ctrl_link_, {kMiscGroup + pi, phones_[pi].frames++, 0, kPush});
    q_.schedule(at, EventKind::ControlDelivery, [this, pi, frame = std::move(frame)] {
        auto& ph = phones_[pi];
        if (!ph.reachable || !ph.mon) return;
        auto decoded = proto::decode(frame);
        if (auto* msg = std::get_if<ControlMessage>(&decoded)) {
            send_messages(pi, ph.mon->on_policy_push(*msg), now());
            trace(ph.def->name, "policy-installed", std::to_string(ph.mon->replica_version()));
        }
    });
}

std::optional<std::vector<std::uint8_t>> Simulation::sync_exchange(std::size_t pi, std::span<const std::uint8_t> frame) {
    if (!phones_[pi].reachable) return std::nullopt;
    ++report_.control_sent;
    std::vector<controller::PolicyPushTarget*> targets;
    for (auto& ph : phones_)
        if (ph.reachable && ph.push) targets.push_back(ph.push.get());
    return router_->handle_sync_frame(frame, phones_[pi].cert, now(), targets);
}

ControlMessage Simulation::identity_message(std::size_t pi, MessageType type) const {
    ControlMessage m;
    m.msg_type = type;
    m.phone_mac = phones_[pi].def->mac;
    m.credential_hash = phones_[pi].cred;
    m.policy_version = router_->policy().version;  // a compromised Monitor knows the current version
    return m;
}

// ── Scripted actions ─────────────────────────────────────────────────────────

void Simulation::run_action(const ActionSpec& a) {
    auto& out = report_.outcomes;
    const auto target_device = a.dst.empty() ? nullptr : device(a.dst);
    trace("script", "action", a.label);

    switch (a.kind) {
        case ActionKind::Partition: {
            phones_[phone_index(a.phone)].reachable = false;
            out[a.label] = "partitioned";
            break;
        }
        case ActionKind::Heal: {
            const auto pi = phone_index(a.phone);
            auto& ph = phones_[pi];
            ph.reachable = true;
            if (!ph.mon) {
                out[a.label] = "no-monitor";
                break;
            }
            SyncLink link(this, pi);
            auto r = ph.mon->on_network_change(link);
            send_messages(pi, r.invalidations, now());
            out[a.label] = std::string(sync_kind(r.kind)) + ":v" + std::to_string(r.version);
            break;
        }
        case ActionKind::McnUpdate: {
            const auto pi = phone_index(a.phone);
            auto& ph = phones_[pi];
            if (!ph.mon || !a.update) {
                out[a.label] = "no-monitor";
                break;
            }
            SyncLink link(this, pi);
            auto r = ph.mon->mcn_push_update(*a.update, link);
            send_messages(pi, ph.mon->take_outbox(), now());
            if (auto* v = std::get_if<std::uint64_t>(&r))
                out[a.label] = "ok:v" + std::to_string(*v);
            else
                out[a.label] = "failed:" + std::string(push_error(std::get<monitor::PushFailure>(r).error));
            break;
        }
        case ActionKind::Tamper: {
            const auto pi = phone_index(a.phone);
            auto msg = identity_message(pi, MessageType::PolicyUpdate);
            policy::Role guest{std::string(policy::kGuestRole), true, {}};
            msg.body = policy::format_update(policy::PolicyUpdate{{policy::change::UpsertRole{guest}}});
            const auto before = router_->policy().version;
            auto reply = sync_exchange(pi, proto::encode(msg));
            if (!reply) {
                out[a.label] = "Lost";
                break;
            }
            auto decoded = proto::decode(*reply);
            const auto* ack = std::get_if<ControlMessage>(&decoded);
            const bool accepted = ack && ack->flag == proto::Flag::Validate && router_->policy().version != before;
            out[a.label] = accepted ? "Accepted" : "Rejected";
            break;
        }
        case ActionKind::ForgeDecision: {
            const auto pi = phone_index(a.phone);
            auto& ph = phones_[pi];
            auto msg = identity_message(pi, MessageType::FlowDecision);
            msg.flow = make_flow(a.ip.value_or(ph.def->ip), ph.next_port++, target_device->ip, 80, Protocol::Tcp);
            msg.app_id = a.app_id;
            if (const auto* app = router_->policy().find_app(a.app_id)) msg.app_sig = app->signature;
            msg.flag = proto::Flag::Validate;
            send_control(pi, proto::encode(msg), now(), {kMiscGroup + pi, ph.frames, 0, kMisc}, a.label);
            break;
        }
        case ActionKind::Flood: {
            const auto pi = phone_index(a.phone);
            auto& ph = phones_[pi];
            const auto n = p_.rate_threshold + p_.flood_excess;
            for (std::int64_t i = 0; i < n; ++i) {
                auto msg = identity_message(pi, MessageType::FlowDecision);
                msg.flow = make_flow(ph.def->ip, static_cast<std::uint16_t>(50000 + i), target_device->ip, 80,
                                     Protocol::Tcp);
                msg.app_id = a.app_id;
                if (const auto* app = router_->policy().find_app(a.app_id)) msg.app_sig = app->signature;
                send_control(pi, proto::encode(msg), now() + ms(i), {kMiscGroup + pi, ph.frames, 0, kMisc});
            }
            out[a.label] = std::to_string(n);
            break;
        }
        case ActionKind::Capture: {
            auto& ph = phones_[phone_index(a.phone)];
            ph.captured = ph.last_decision;
            out[a.label] = ph.captured ? "captured" : "none";
            break;
        }
        case ActionKind::Replay: {
            const auto pi = phone_index(a.phone);
            const auto& ph = phones_[pi];
            if (!ph.captured) {
                out[a.label] = "none";
                break;
            }
            // Injected next to the router, so a partitioned phone does not stop it.
            const auto st = router_->receive_decision(*ph.captured, ph.cert, now());
            ++report_.intake[std::string(controller::to_string(st))];
            out[a.label] = std::string(controller::to_string(st));
            if (st == controller::IntakeStatus::Queued)
                q_.schedule(now() + SimTime{p_.decision_apply_us}, EventKind::TimerFire, [this] { drain(); });
            break;
        }
        case ActionKind::Spoof: {
            ++report_.packets_emitted;
            const Packet pkt{*a.mac, target_device->mac,
                             make_flow(*a.ip, 45000, target_device->ip, 80, Protocol::Tcp), false, 1};
            out[a.label] = std::string(controller::to_string(lan_ingress(pkt, false).reason));
            break;
        }
        case ActionKind::DeviceOutbound: {
            ++report_.packets_emitted;
            const auto* h = host(a.host);
            const Packet pkt{target_device->mac, sc_.topology.router_mac,
                             make_flow(target_device->ip, a.local_port, h->ip, a.port, Protocol::Tcp), false, 1};
            out[a.label] = std::string(controller::to_string(lan_ingress(pkt, true).reason));
            break;
        }
        case ActionKind::WanInbound: {
            ++report_.packets_emitted;
            const auto* h = host(a.host);
            const Packet pkt{sc_.topology.router_mac, target_device->mac,
                             make_flow(h->ip, a.port, target_device->ip, a.local_port, Protocol::Tcp), false, 1};
            out[a.label] = std::string(controller::to_string(wan_ingress(pkt).reason));
            break;
        }
        case ActionKind::Probe: {
            auto& ph = phones_[phone_index(a.phone)];
            ++report_.packets_emitted;
            const Packet pkt{ph.def->mac, target_device->mac,
                             make_flow(ph.def->ip, ph.next_port++, target_device->ip, 80, Protocol::Tcp), false, 1};
            out[a.label] = std::string(controller::to_string(lan_ingress(pkt, false).reason));
            break;
        }
        case ActionKind::Snapshot: {
            const auto& ph = phones_[phone_index(a.phone)];
            auto flows = router_->pfdc().flows_of(ph.def->mac);
            out[a.label] = "replica=" + (ph.mon ? std::to_string(ph.mon->replica_version()) : std::string("-")) +
                           " router=" + std::to_string(router_->policy().version) +
                           " pfdc=" + std::to_string(flows.size());
            report_.snapshots[a.label] = std::move(flows);
            break;
        }
    }
}

// ── Driver ───────────────────────────────────────────────────────────────────

TrialReport Simulation::run() {
    const auto& topo = sc_.topology;

    // Scripted flows.
    SimTime last{0};
    flows_.resize(sc_.flows.size());
    for (std::size_t i = 0; i < sc_.flows.size(); ++i) {
        const auto& spec = sc_.flows[i];
        auto& f = flows_[i];
        f.spec = &spec;
        f.phone = phone_index(spec.phone);
        auto& ph = phones_[f.phone];
        for (const auto& app : ph.def->apps)
            if (app.app_id == spec.app_id) f.uid = app.uid;

        Ipv4Address dst_ip;
        if (const auto* d = device(spec.dst)) {
            f.dst_mac = d->mac;
            f.l2_dst = d->mac;
            dst_ip = d->ip;
            f.rec.dst_protected = d->is_protected;
        } else {
            const auto* h = host(spec.dst);
            f.l2_dst = topo.router_mac;
            dst_ip = h->ip;
            f.wan = true;
        }
        const auto sport = spec.src_port.value_or(ph.next_port++);
        f.rec.flow = make_flow(ph.def->ip, sport, dst_ip, spec.dst_port, spec.protocol);
        f.rec.index = i;
        f.rec.label = spec.label;
        f.rec.phone = spec.phone;
        f.rec.app_id = spec.app_id;
        f.rec.dst = spec.dst;
        f.key = spec.latency_key.value_or(1000 + i);
        f.managed_tunnel = ph.tunnel && ph.mon->replica().find_app(spec.app_id) != nullptr;
        flow_by_id_[f.rec.flow] = i;

        auto start = ms(spec.start_ms);
        if (spec.random_phase) {
            const auto grid = ms(p_.poll_ms);
            start = SimTime{((start.count() + grid.count() - 1) / grid.count()) * grid.count()} +
                    ms(static_cast<std::int64_t>(
                        sampler_.uniform(static_cast<std::uint64_t>(p_.poll_ms), {f.key, kPhase})));
        }
        const auto lifetime = spec.lifetime_ms ? (*spec.lifetime_ms < 0 ? p_.flow_lifetime_ms : *spec.lifetime_ms) : 0;
        const auto busy = spec.exchanges * (spec.gap_ms + (p_.max_retries + 1) * p_.tcp_rto_ms);
        last = std::max(last, start + ms(p_.poll_ms) + ms(spec.send_delay_ms.value_or(p_.send_delay_ms)) +
                                  ms(std::max(lifetime, busy)) + ms(p_.time_wait_ms));

        if (spec.align_poll && ph.mon && !ph.tunnel) {
            ph.aligned.push_back(i);
        } else {
            q_.schedule(start, EventKind::FlowAction, [this, i] { open_flow(i); });
        }
    }

    // Scripted actions.
    for (const auto& a : sc_.actions) {
        const auto at = ms(a.at_ms + (a.after_penalty ? p_.penalty_ms : 0));
        last = std::max(last, at);
        q_.schedule(at, EventKind::TimerFire, [this, &a] { run_action(a); });
    }
    horizon_ = last + ms(p_.settle_ms);

    // Phone background sockets and Monitors.
    for (std::size_t pi = 0; pi < phones_.size(); ++pi) {
        auto& ph = phones_[pi];
        const auto cloud = topo.hosts.empty() ? Ipv4Address::from_octets(8, 8, 8, 8) : topo.hosts.front().ip;
        kernel_op(ph, [&] {
            for (std::int64_t b = 0; b < p_.background_sockets; ++b)
                ph.kernel.open(make_flow(ph.def->ip, static_cast<std::uint16_t>(30000 + b), cloud, 443, Protocol::Tcp),
                               kBackgroundUid, procfs::AddressForm::Mapped6, SimTime{0});
        });
        if (!ph.mon) continue;
        if (ph.tunnel)
            q_.schedule(ms(p_.housekeeping_ms), EventKind::TimerFire, [this, pi] { housekeeping(pi); });
        else
            q_.schedule(SimTime{0}, EventKind::PollTick, [this, pi] { poll(pi); });
    }
    q_.run();

    // Finalize.
    for (auto& f : flows_) {
        f.rec.decision_latency = measure_decision_latency(f.rec);
        if (f.rec.late_drop)
            report_.violations.push_back("flow " + std::to_string(f.rec.index) + " (" + f.rec.label +
                                         ") dropped after Forward(Valid) without invalidation");
        report_.flows.push_back(std::move(f.rec));
    }
    for (const auto& ph : phones_) {
        if (!ph.mon) continue;
        report_.alerts += static_cast<std::int64_t>(ph.mon->alerts().size());
        const auto& iv = ph.mon->poll_stats().actual_intervals;
        report_.actual_intervals.insert(report_.actual_intervals.end(), iv.begin(), iv.end());
        if (ph.mon->poll_stats().parse_errors)
            report_.violations.push_back(ph.def->name + ": procfs parse errors on simulated kernel output");
    }
    const auto& st = router_->stats();
    report_.pfdc_inserts = static_cast<std::int64_t>(st.pfdc_inserts);
    report_.admin_notifications = static_cast<std::int64_t>(router_->log().admin_count());
    report_.event_log = router_->log().to_csv();

    std::int64_t router_total = 0;
    for (const auto& [r, n] : st.verdicts) router_total += static_cast<std::int64_t>(n);
    if (report_.packets_emitted != report_.packets_forwarded + report_.packets_dropped)
        report_.violations.push_back("conservation: emitted " + std::to_string(report_.packets_emitted) +
                                     " != forwarded " + std::to_string(report_.packets_forwarded) + " + dropped " +
                                     std::to_string(report_.packets_dropped));
    if (router_total != report_.packets_forwarded + report_.packets_dropped)
        report_.violations.push_back("router verdict total disagrees with harness count");
    return std::move(report_);
}

}  // namespace

TrialReport run_trial(const Scenario& scenario, const TrialSpec& trial) {
    if (auto errors = validate_scenario(scenario); !errors.empty()) {
        std::string msg = "scenario " + scenario.name + " is invalid:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ScenarioError(msg);
    }
    Simulation sim(scenario, trial);
    return sim.run();
}

std::vector<TrialSpec> expand_trials(const Scenario& scenario, std::uint64_t seed) {
    std::vector<TrialSpec> out;
    const auto& base = scenario.params;
    const auto sweep = base.poll_sweep.empty() ? std::vector<std::int64_t>{base.poll_ms} : base.poll_sweep;
    for (std::size_t si = 0; si < sweep.size(); ++si) {
        for (std::size_t vi = 0; vi < scenario.variants.size(); ++vi) {
            const auto& variant = scenario.variants[vi];
            SimParams params = base;
            for (const auto& [k, v] : variant.overrides) params.set(k, v);
            params.poll_ms = sweep[si];
            for (std::int64_t r = 0; r < params.trials; ++r) {
                const auto trial_seed = mix(seed, {si, vi, static_cast<std::uint64_t>(r)});
                for (bool vanilla : params.modes) {
                    TrialSpec t;
                    t.index = out.size();
                    t.repetition = r;
                    t.variant = variant.name;
                    t.vanilla = vanilla;
                    t.params = params;
                    t.seed = trial_seed;
                    out.push_back(std::move(t));
                }
            }
        }
    }
    return out;
}

}  // namespace hanguard::sim
