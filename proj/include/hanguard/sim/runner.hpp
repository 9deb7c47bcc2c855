#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hanguard/sim/metrics.hpp"
#include "hanguard/sim/scenario.hpp"
#include "hanguard/sim/simulator.hpp"

namespace hanguard::sim {

struct RunOptions {
    std::uint64_t seed = 1;
    bool trace = false;
    std::optional<std::int64_t> trials;     // replaces the scenario's repetition count
    std::optional<std::int64_t> poll_ms;    // replaces the poll sweep with one interval
    std::optional<monitor::Strategy> strategy;
    std::optional<bool> vanilla;            // run only this mode
    std::vector<std::pair<std::string, std::string>> overrides;  // applied before variant overrides
};

// Applies the options to a copy of the scenario.
Scenario apply_options(const Scenario& scenario, const RunOptions& options);

// Runs every trial, then the generic invariants and the checks of the scenario's profile.
// Throws ScenarioError when the scenario does not validate.
MetricsReport run_scenario(const Scenario& scenario, const RunOptions& options);

// Invariants that hold for any scenario.
std::vector<std::string> check_invariants(const TrialReport& trial);

// Expected outcomes of a built-in profile. Unknown profiles have no checks.
std::vector<std::string> check_profile(const Scenario& scenario, const MetricsReport& report);

// True when a poll tick k * interval falls in [open, open + lifetime).
bool tick_in_window(std::int64_t open_us, std::int64_t lifetime_us, std::int64_t interval_us);

}  // namespace hanguard::sim
