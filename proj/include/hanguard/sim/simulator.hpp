#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hanguard/sim/metrics.hpp"
#include "hanguard/sim/scenario.hpp"

namespace hanguard::sim {

// One independent run: a fresh router, fresh phones, one seed.
struct TrialSpec {
    std::size_t index = 0;
    std::int64_t repetition = 0;
    std::string variant;
    bool vanilla = false;
    SimParams params;  // effective parameters, poll_ms already set from the sweep
    std::uint64_t seed = 0;
    bool trace = false;
};

// Runs a single trial. The scenario must validate.
TrialReport run_trial(const Scenario& scenario, const TrialSpec& trial);

// Expands sweep x variants x modes x repetitions. Modes share seeds so that runs in
// different modes draw identical link latencies.
std::vector<TrialSpec> expand_trials(const Scenario& scenario, std::uint64_t seed);

}  // namespace hanguard::sim
