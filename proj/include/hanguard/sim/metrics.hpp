#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hanguard/controller.hpp"
#include "hanguard/net_types.hpp"

namespace hanguard::sim {

struct FlowRecord {
    std::size_t index = 0;
    std::string label;
    std::string phone;
    std::string app_id;
    std::string dst;
    FlowId flow;
    bool dst_protected = false;

    std::optional<SimTime> opened_at;
    std::optional<SimTime> closed_at;
    std::optional<SimTime> detected_at;  // Monitor reported the flow as opened
    std::optional<SimTime> first_arrival;
    std::optional<SimTime> decision_stored;
    std::optional<SimTime> decision_latency;

    bool delivered = false;  // at least one response reached the app
    bool gave_up = false;    // retries exhausted on some exchange
    std::int64_t attempts = 0;
    std::map<controller::Reason, std::int64_t> verdicts;  // request packets only
    std::vector<SimTime> rtts;                            // per completed exchange
    bool late_drop = false;                               // drop after a Forward(Valid)
};

struct PollSample {
    SimTime at{0};
    std::uint64_t lines = 0;
    bool idle = false;  // no procfs file changed since the previous poll
};

struct TrialReport {
    std::size_t index = 0;
    std::int64_t repetition = 0;
    std::string variant;
    bool vanilla = false;
    std::int64_t poll_ms = 0;
    std::uint64_t seed = 0;

    std::vector<FlowRecord> flows;
    std::map<controller::Reason, std::int64_t> verdicts;
    std::int64_t packets_emitted = 0;
    std::int64_t packets_forwarded = 0;
    std::int64_t packets_dropped = 0;
    std::int64_t pfdc_lookups = 0;
    std::int64_t pfdc_lookups_unprotected = 0;
    std::int64_t pfdc_inserts = 0;

    std::uint64_t lines_parsed = 0;
    std::vector<PollSample> polls;
    std::vector<SimTime> actual_intervals;

    std::int64_t control_sent = 0;
    std::int64_t control_lost = 0;
    std::map<std::string, std::int64_t> intake;  // IntakeStatus name -> count
    std::int64_t alerts = 0;
    std::int64_t admin_notifications = 0;
    std::int64_t penalties = 0;

    // Penalty bookkeeping per phone, derived from the applied-decision stream.
    std::map<std::string, SimTime> penalty_start;
    std::map<std::string, SimTime> penalty_until;  // as held by the router's penalty box
    std::map<std::string, std::int64_t> sent_in_penalty;
    std::map<std::string, std::int64_t> dropped_in_penalty;

    std::map<std::string, std::string> outcomes;               // scripted action results
    std::map<std::string, std::set<FlowId>> snapshots;         // PFDC flows per snapshot label
    std::string event_log;                                     // controller CSV log
    std::vector<std::string> trace;                            // time_us,entity,event,detail
    std::vector<std::string> violations;                       // invariants broken during the run
};

struct MetricsReport {
    std::string scenario;
    std::uint64_t seed = 0;
    std::vector<TrialReport> trials;
    std::vector<std::string> failures;  // invariant and profile check failures, in order

    bool ok() const { return failures.empty(); }
};

// decision_stored - first_data_arrival; absent unless both are known.
std::optional<SimTime> measure_decision_latency(const FlowRecord& flow);

// scenario,trial,metric,value
std::string metrics_csv(const MetricsReport& report);
std::string trace_csv(const MetricsReport& report);

}  // namespace hanguard::sim
