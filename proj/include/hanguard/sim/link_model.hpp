#pragma once

#include <cstdint>
#include <initializer_list>

#include "hanguard/net_types.hpp"

namespace hanguard::sim {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix(std::uint64_t seed, std::initializer_list<std::uint64_t> parts);

struct LinkModel {
    SimTime base{0};
    SimTime jitter{0};  // uniform half-width
};

// Counter-based draws: every sample is a pure function of (trial seed, key). Two runs that
// ask for the same key get the same latency no matter what else happened in between, which
// is what lets runs in different modes be compared packet for packet.
class LatencySampler {
public:
    explicit LatencySampler(std::uint64_t trial_seed) : seed_(trial_seed) {}

    // base + U[-jitter, +jitter], clamped at zero; 1 µs granularity.
    SimTime draw(const LinkModel& link, std::initializer_list<std::uint64_t> key) const;
    // Uniform integer in [0, n).
    std::uint64_t uniform(std::uint64_t n, std::initializer_list<std::uint64_t> key) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

}  // namespace hanguard::sim
