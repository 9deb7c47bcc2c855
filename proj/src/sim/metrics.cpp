#include "hanguard/sim/metrics.hpp"

#include <sstream>

namespace hanguard::sim {

std::optional<SimTime> measure_decision_latency(const FlowRecord& flow) {
    if (!flow.decision_stored || !flow.first_arrival) return std::nullopt;
    return *flow.decision_stored - *flow.first_arrival;
}

namespace {

std::string csv_field(const std::string& v) {
    if (v.find_first_of(",\"\n") == std::string::npos) return v;
    std::string out = "\"";
    for (char c : v) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

class Rows {
public:
    Rows(std::ostringstream& os, const std::string& scenario, std::size_t trial)
        : os_(os), scenario_(csv_field(scenario)), trial_(trial) {}

    template <typename T>
    void add(const std::string& metric, const T& value) {
        os_ << scenario_ << ',' << trial_ << ',' << csv_field(metric) << ',';
        if constexpr (std::is_convertible_v<T, std::string>)
            os_ << csv_field(std::string(value));
        else
            os_ << value;
        os_ << '\n';
    }

private:
    std::ostringstream& os_;
    std::string scenario_;
    std::size_t trial_;
};

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
    std::ostringstream os;
    os << "scenario,trial,metric,value\n";
    for (const auto& t : report.trials) {
        Rows r(os, report.scenario, t.index);
        r.add("mode", t.vanilla ? "vanilla" : "hanguard");
        r.add("variant", t.variant);
        r.add("repetition", t.repetition);
        r.add("poll_ms", t.poll_ms);
        r.add("seed", t.seed);
        r.add("packets_emitted", t.packets_emitted);
        r.add("packets_forwarded", t.packets_forwarded);
        r.add("packets_dropped", t.packets_dropped);
        for (auto reason : controller::kAllReasons) {
            auto it = t.verdicts.find(reason);
            r.add("verdict." + std::string(controller::to_string(reason)), it == t.verdicts.end() ? 0 : it->second);
        }
        r.add("pfdc_lookups", t.pfdc_lookups);
        r.add("pfdc_lookups_unprotected", t.pfdc_lookups_unprotected);
        r.add("pfdc_inserts", t.pfdc_inserts);
        r.add("polls", t.polls.size());
        r.add("lines_parsed", t.lines_parsed);
        r.add("control_sent", t.control_sent);
        r.add("control_lost", t.control_lost);
        for (const auto& [k, v] : t.intake) r.add("intake." + k, v);
        r.add("alerts", t.alerts);
        r.add("admin_notifications", t.admin_notifications);
        r.add("penalties", t.penalties);
        for (const auto& [k, v] : t.sent_in_penalty) r.add("sent_in_penalty." + k, v);
        for (const auto& [k, v] : t.dropped_in_penalty) r.add("dropped_in_penalty." + k, v);
        for (const auto& [k, v] : t.outcomes) r.add("outcome." + k, v);
        for (const auto& f : t.flows) {
            const auto p = "flow." + std::to_string(f.index) + "." + f.label + ".";
            r.add(p + "delivered", f.delivered ? 1 : 0);
            r.add(p + "attempts", f.attempts);
            r.add(p + "detected", f.detected_at ? 1 : 0);
            if (f.detected_at && f.opened_at) r.add(p + "detect_us", (*f.detected_at - *f.opened_at).count());
            if (f.decision_latency) r.add(p + "decision_latency_us", f.decision_latency->count());
            for (std::size_t i = 0; i < f.rtts.size(); ++i)
                r.add(p + "rtt_us." + std::to_string(i), f.rtts[i].count());
        }
        r.add("violations", t.violations.size());
    }
    return os.str();
}

std::string trace_csv(const MetricsReport& report) {
    std::ostringstream os;
    os << "trial,time_us,entity,event,detail\n";
    for (const auto& t : report.trials)
        for (const auto& line : t.trace) os << t.index << ',' << line << '\n';
    return os.str();
}

}  // namespace hanguard::sim
