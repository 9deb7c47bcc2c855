#include "hanguard/sim/runner.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace hanguard::sim {

using controller::Reason;

Scenario apply_options(const Scenario& scenario, const RunOptions& options) {
    Scenario sc = scenario;
    auto& p = sc.params;
    if (options.trials) p.trials = *options.trials;
    if (options.poll_ms) {
        p.set("poll_ms", std::to_string(*options.poll_ms));
        p.poll_sweep.clear();
    }
    if (options.strategy) p.strategy = *options.strategy;
    if (options.vanilla) p.modes = {*options.vanilla};
    for (const auto& [k, v] : options.overrides) p.set(k, v);
    return sc;
}

bool tick_in_window(std::int64_t open_us, std::int64_t lifetime_us, std::int64_t interval_us) {
    const auto first_tick = (open_us + interval_us - 1) / interval_us * interval_us;
    return first_tick < open_us + lifetime_us;
}

std::vector<std::string> check_invariants(const TrialReport& t) {
    std::vector<std::string> out = t.violations;
    for (const auto& f : t.flows) {
        std::int64_t seen = 0;
        for (const auto& [r, n] : f.verdicts) seen += n;
        if (seen != f.attempts)
            out.push_back("flow " + std::to_string(f.index) + " (" + f.label + "): " + std::to_string(f.attempts) +
                          " requests sent but " + std::to_string(seen) + " reached the router");
    }
    if (t.control_lost > t.control_sent) out.push_back("more control frames lost than sent");
    return out;
}

namespace {

// ── Check helpers ────────────────────────────────────────────────────────────

class Checker {
public:
    Checker(const Scenario& sc, std::vector<std::string>& out) : sc_(sc), out_(out) {}

    void expect(const TrialReport& t, bool ok, const std::string& what) {
        if (ok) return;
        out_.push_back(sc_.name + " trial " + std::to_string(t.index) + " (" + (t.vanilla ? "vanilla" : "hanguard") +
                       ", " + t.variant + ", poll " + std::to_string(t.poll_ms) + " ms): " + what);
    }
    void expect_global(bool ok, const std::string& what) {
        if (!ok) out_.push_back(sc_.name + ": " + what);
    }

    static std::string outcome(const TrialReport& t, const std::string& label) {
        auto it = t.outcomes.find(label);
        return it == t.outcomes.end() ? std::string("<none>") : it->second;
    }
    void expect_outcome(const TrialReport& t, const std::string& label, const std::string& want) {
        const auto got = outcome(t, label);
        expect(t, got == want, label + " is " + got + ", expected " + want);
    }
    void expect_outcome_not(const TrialReport& t, const std::string& label, const std::string& bad) {
        const auto got = outcome(t, label);
        expect(t, got != bad && got != "<none>", label + " is " + got);
    }

    // Every request packet of the flow got `reason`, and there were `count` of them if given.
    void expect_only(const TrialReport& t, const FlowRecord& f, Reason reason, std::optional<std::int64_t> count = {}) {
        bool only = !f.verdicts.empty();
        std::int64_t n = 0;
        for (const auto& [r, c] : f.verdicts) {
            if (r != reason) only = false;
            n += c;
        }
        expect(t, only, flow_name(f) + " saw verdicts other than " + std::string(controller::to_string(reason)));
        if (count)
            expect(t, n == *count,
                   flow_name(f) + " had " + std::to_string(n) + " requests, expected " + std::to_string(*count));
    }

    static std::string flow_name(const FlowRecord& f) {
        return "flow " + std::to_string(f.index) + " (" + f.label + " " + f.phone + " -> " + f.dst + ")";
    }

    void for_flows(const TrialReport& t, const std::string& label, const std::function<void(const FlowRecord&)>& fn) {
        bool any = false;
        for (const auto& f : t.flows)
            if (f.label == label) {
                any = true;
                fn(f);
            }
        expect(t, any, "no flows labelled " + label);
    }

private:
    const Scenario& sc_;
    std::vector<std::string>& out_;
};

std::optional<std::uint64_t> field(const std::string& snapshot, const std::string& key) {
    const auto pos = snapshot.find(key + "=");
    if (pos == std::string::npos) return std::nullopt;
    const auto start = pos + key.size() + 1;
    const auto end = snapshot.find(' ', start);
    try {
        return std::stoull(snapshot.substr(start, end - start));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// ── Profiles ─────────────────────────────────────────────────────────────────

void check_app_level(Checker& c, const TrialReport& t, const SimParams& p, const std::string& blocked) {
    c.for_flows(t, "official", [&](const FlowRecord& f) {
        c.expect(t, f.delivered && !f.gave_up, Checker::flow_name(f) + " was not delivered");
        c.expect_only(t, f, t.vanilla ? Reason::NotInteresting : Reason::Valid);
    });
    c.for_flows(t, blocked, [&](const FlowRecord& f) {
        if (t.vanilla) {
            c.expect(t, f.delivered, Checker::flow_name(f) + " was not delivered without enforcement");
            return;
        }
        c.expect(t, !f.delivered && f.gave_up, Checker::flow_name(f) + " reached the device");
        c.expect_only(t, f, Reason::NoDecision, 1 + p.max_retries);
    });
    if (!t.vanilla) c.expect(t, t.alerts > 0, "Monitor raised no alert");
}

void check_s3(Checker& c, const TrialReport& t) {
    c.for_flows(t, "official", [&](const FlowRecord& f) {
        c.expect(t, f.delivered, Checker::flow_name(f) + " was not delivered");
    });
    c.for_flows(t, "guest", [&](const FlowRecord& f) {
        if (t.vanilla) {
            c.expect(t, f.delivered, Checker::flow_name(f) + " was not delivered without enforcement");
        } else {
            c.expect(t, !f.delivered, Checker::flow_name(f) + " reached a protected device");
            c.expect_only(t, f, Reason::PhoneLevelDeny);
        }
    });
    c.for_flows(t, "guest-internet", [&](const FlowRecord& f) {
        c.expect(t, f.delivered, Checker::flow_name(f) + " lost Internet access");
        c.expect_only(t, f, Reason::NotInteresting);
    });
    c.expect_outcome(t, "forged", "UnknownPhone");
}

void check_s4(Checker& c, const TrialReport& t, const SimParams& p) {
    c.expect_outcome(t, "tamper", "Rejected");
    c.expect_outcome(t, "forged_foreign_ip", "SpoofSuspected");
    c.for_flows(t, "benign", [&](const FlowRecord& f) {
        c.expect(t, f.delivered && !f.gave_up, Checker::flow_name(f) + " was disrupted");
        c.expect_only(t, f, Reason::Valid);
    });
    auto before = t.snapshots.find("bob_before");
    auto after = t.snapshots.find("bob_after");
    const bool have = before != t.snapshots.end() && after != t.snapshots.end();
    c.expect(t, have && !before->second.empty(), "bob has no cached decisions before the attack");
    c.expect(t, have && before->second == after->second, "bob's cached decisions changed during the attack");

    const auto flood = p.rate_threshold + p.flood_excess;
    const bool should_penalize = flood > p.rate_threshold;
    if (should_penalize) {
        c.expect(t, t.penalties == 1, "expected one penalty, got " + std::to_string(t.penalties));
        auto s = t.penalty_start.find("mallory");
        auto u = t.penalty_until.find("mallory");
        c.expect(t, s != t.penalty_start.end() && u != t.penalty_until.end() &&
                        u->second - s->second == from_ms(p.penalty_ms),
                 "penalty does not last exactly penalty_ms");
        c.expect_outcome(t, "probe_during_penalty", "Penalized");
        auto sent = t.sent_in_penalty.find("mallory");
        auto dropped = t.dropped_in_penalty.find("mallory");
        c.expect(t, sent != t.sent_in_penalty.end() && sent->second > 0, "no attacker packets in the penalty window");
        c.expect(t, sent != t.sent_in_penalty.end() && dropped != t.dropped_in_penalty.end() &&
                        dropped->second == sent->second,
                 "an attacker packet passed during the penalty");
        c.for_flows(t, "attacker", [&](const FlowRecord& f) {
            c.expect(t, !f.delivered, Checker::flow_name(f) + " passed during the penalty");
            c.expect_only(t, f, Reason::Penalized);
        });
    } else {
        c.expect(t, t.penalties == 0, "penalized at exactly the threshold");
        c.expect_outcome_not(t, "probe_during_penalty", "Penalized");
    }
    c.expect_outcome_not(t, "probe_after_penalty", "Penalized");
}

void check_s5(Checker& c, const MetricsReport& report, std::int64_t jitter_us) {
    std::map<std::int64_t, std::vector<std::int64_t>> by_interval;
    for (const auto& t : report.trials) {
        if (t.vanilla) continue;
        for (const auto& f : t.flows) {
            c.expect(t, f.decision_latency.has_value(), Checker::flow_name(f) + " has no decision latency");
            if (f.decision_latency) by_interval[t.poll_ms].push_back(f.decision_latency->count());
        }
    }
    std::vector<double> means;
    for (const auto& [poll, xs] : by_interval) {
        means.push_back(static_cast<double>(std::accumulate(xs.begin(), xs.end(), std::int64_t{0})) /
                        static_cast<double>(xs.size()));
        c.expect_global(std::any_of(xs.begin(), xs.end(), [](std::int64_t x) { return x < 0; }),
                        "no negative decision latency at poll " + std::to_string(poll) + " ms");
    }
    if (means.size() > 1) {
        const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
        c.expect_global(*hi - *lo < static_cast<double>(jitter_us),
                        "mean decision latency varies by " + std::to_string(*hi - *lo) + " us across poll intervals");
    }
}

void check_s6(Checker& c, const TrialReport& t, const SimParams& p) {
    if (t.vanilla) return;
    for (const auto& f : t.flows) {
        if (!f.opened_at) {
            c.expect(t, false, Checker::flow_name(f) + " never opened");
            continue;
        }
        const bool expected =
            tick_in_window(f.opened_at->count(), from_ms(p.flow_lifetime_ms).count(), from_ms(t.poll_ms).count());
        const bool detected = f.detected_at.has_value();
        c.expect(t, detected == expected,
                 Checker::flow_name(f) + (detected ? " detected" : " missed") + " at phase " +
                     std::to_string(f.opened_at->count() % from_ms(t.poll_ms).count()) + " us");
        if (t.poll_ms == 10) c.expect(t, detected, Checker::flow_name(f) + " missed at 10 ms polling");
    }
}

void check_s7(Checker& c, const TrialReport& t) {
    c.expect_outcome(t, "captured", "captured");
    c.expect_outcome(t, "replay_partitioned", "StaleVersion");
    c.expect_outcome(t, "replay_healed", "StaleVersion");
    if (t.vanilla) return;
    const auto part = Checker::outcome(t, "carol_partitioned");
    const auto healed = Checker::outcome(t, "carol_healed");
    const auto bob = Checker::outcome(t, "bob_synced");
    const auto v_next = field(part, "router");
    c.expect(t, Checker::outcome(t, "update").rfind("ok:v", 0) == 0, "MCN update failed");
    c.expect(t, v_next && field(part, "replica") == *v_next - 1, "carol's replica during partition: " + part);
    c.expect(t, v_next && field(healed, "replica") == *v_next, "carol's replica after heal: " + healed);
    c.expect(t, v_next && field(bob, "replica") == *v_next, "bob's replica after the push: " + bob);
    c.expect(t, Checker::outcome(t, "heal").rfind("Updated", 0) == 0, "heal did not pull the policy");
}

void check_s8(Checker& c, const TrialReport& t) {
    c.expect_outcome(t, "outbound", "NotInteresting");
    c.expect_outcome(t, "inbound_contacted", "NotInteresting");
    for (const auto* label : {"inbound_other_port", "inbound_other_host", "inbound_uncontacted_device"})
        c.expect_outcome(t, label, t.vanilla ? "NotInteresting" : "NatBlocked");
}

void check_s9(Checker& c, const TrialReport& t) {
    for (const auto* label : {"ip_spoof", "mac_spoof", "device_ip_spoof"})
        c.expect_outcome(t, label, t.vanilla ? "NotInteresting" : "SpoofSuspected");
    c.expect_outcome(t, "consistent", "NotInteresting");
}

const FlowRecord* find_flow(const TrialReport& t, const std::string& label) {
    for (const auto& f : t.flows)
        if (f.label == label) return &f;
    return nullptr;
}

void check_s10(Checker& c, const MetricsReport& report, const Scenario& sc) {
    const auto& p = sc.params;
    const auto hop = SimTime{p.tunnel_hop_us};
    for (const auto& t : report.trials) {
        c.expect(t, t.pfdc_lookups_unprotected == 0, "PFDC consulted for traffic to unprotected devices");
        const auto* tunnel = find_flow(t, "tunnel-managed");
        const auto* procfs = find_flow(t, "procfs-managed");
        const auto* plain = find_flow(t, "unmanaged");
        if (!tunnel || !procfs || !plain) {
            c.expect(t, false, "missing flow classes");
            continue;
        }
        for (const auto* f : {tunnel, procfs, plain})
            c.expect(t, f->rtts.size() == static_cast<std::size_t>(sc.flows[f->index].exchanges) && !f->gave_up,
                     Checker::flow_name(*f) + " did not complete every exchange");
        if (tunnel->rtts.size() != plain->rtts.size() || procfs->rtts != plain->rtts) {
            c.expect(t, procfs->rtts == plain->rtts, "procfs-managed RTTs differ from unmanaged");
            continue;
        }
        for (std::size_t i = 0; i < plain->rtts.size(); ++i) {
            const auto want = plain->rtts[i] + (t.vanilla ? SimTime{0} : 2 * hop);
            c.expect(t, tunnel->rtts[i] == want,
                     "tunnel RTT " + std::to_string(tunnel->rtts[i].count()) + " us, expected " +
                         std::to_string(want.count()) + " us");
        }
    }
    // Unmanaged traffic sees the same network in both modes.
    for (const auto& a : report.trials) {
        if (!a.vanilla) continue;
        for (const auto& b : report.trials) {
            if (b.vanilla || b.seed != a.seed || b.poll_ms != a.poll_ms || b.variant != a.variant) continue;
            for (const auto* label : {"unmanaged", "unmanaged-ios"}) {
                const auto* fa = find_flow(a, label);
                const auto* fb = find_flow(b, label);
                c.expect(b, fa && fb && fa->rtts == fb->rtts && !fa->rtts.empty(),
                         std::string(label) + " RTTs differ from the vanilla run with the same seed");
            }
        }
    }
}

}  // namespace

std::vector<std::string> check_profile(const Scenario& sc, const MetricsReport& report) {
    std::vector<std::string> out;
    Checker c(sc, out);
    const auto params_of = [&](const TrialReport& t) {
        SimParams p = sc.params;
        for (const auto& v : sc.variants)
            if (v.name == t.variant)
                for (const auto& [k, val] : v.overrides) p.set(k, val);
        p.poll_ms = t.poll_ms;
        return p;
    };
    const auto& prof = sc.profile;
    if (prof == "S5") {
        check_s5(c, report, sc.params.data_jitter_us);
        return out;
    }
    if (prof == "S10") {
        check_s10(c, report, sc);
        return out;
    }
    for (const auto& t : report.trials) {
        const auto p = params_of(t);
        if (prof == "S1") check_app_level(c, t, p, "attacker");
        else if (prof == "S2") check_app_level(c, t, p, "repackaged");
        else if (prof == "S3") check_s3(c, t);
        else if (prof == "S4") check_s4(c, t, p);
        else if (prof == "S6") check_s6(c, t, p);
        else if (prof == "S7") check_s7(c, t);
        else if (prof == "S8") check_s8(c, t);
        else if (prof == "S9") check_s9(c, t);
    }
    return out;
}

MetricsReport run_scenario(const Scenario& scenario, const RunOptions& options) {
    const auto sc = apply_options(scenario, options);
    if (auto errors = validate_scenario(sc); !errors.empty()) {
        std::string msg = "scenario " + sc.name + " is invalid:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ScenarioError(msg);
    }
    MetricsReport report;
    report.scenario = sc.name;
    report.seed = options.seed;
    for (auto& spec : expand_trials(sc, options.seed)) {
        spec.trace = options.trace;
        report.trials.push_back(run_trial(sc, spec));
        for (const auto& v : check_invariants(report.trials.back()))
            report.failures.push_back(sc.name + " trial " + std::to_string(spec.index) + ": " + v);
    }
    for (auto& f : check_profile(sc, report)) report.failures.push_back(std::move(f));
    return report;
}

}  // namespace hanguard::sim
