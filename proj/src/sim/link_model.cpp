#include "hanguard/sim/link_model.hpp"

namespace hanguard::sim {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = splitmix64(seed);
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
    return h;
}

std::uint64_t LatencySampler::uniform(std::uint64_t n, std::initializer_list<std::uint64_t> key) const {
    if (n == 0) return 0;
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t h = mix(seed_, key);
    while (h >= limit) h = splitmix64(h);
    return h % n;
}

SimTime LatencySampler::draw(const LinkModel& link, std::initializer_list<std::uint64_t> key) const {
    const auto j = link.jitter.count();
    if (j <= 0) return link.base < SimTime{0} ? SimTime{0} : link.base;
    const auto offset = static_cast<std::int64_t>(uniform(static_cast<std::uint64_t>(2 * j + 1), key)) - j;
    const auto v = link.base.count() + offset;
    return SimTime{v < 0 ? 0 : v};
}

}  // namespace hanguard::sim
