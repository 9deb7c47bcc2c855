#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include "hanguard/net_types.hpp"

namespace hanguard::sim {

enum class EventKind { FlowAction, PacketArrival, ControlDelivery, TimerFire, PollTick };

// Events at the same instant run by lane, then by scheduling order. Flow actions come
// first so that a poll at the same instant sees a socket opened (or closed) at that instant.
int lane_of(EventKind kind);

struct SimEvent {
    SimTime at{0};
    int lane = 0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::TimerFire;
    std::function<void()> action;
};

class EventQueue {
public:
    void schedule(SimTime at, EventKind kind, std::function<void()> action);
    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }
    SimTime now() const { return now_; }
    std::uint64_t processed() const { return processed_; }

    // Pops and runs the next event. Returns false when the queue is empty.
    bool step();
    void run();

private:
    struct Later {
        bool operator()(const SimEvent& a, const SimEvent& b) const {
            if (a.at != b.at) return a.at > b.at;
            if (a.lane != b.lane) return a.lane > b.lane;
            return a.seq > b.seq;
        }
    };

    std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t processed_ = 0;
    SimTime now_{0};
};

}  // namespace hanguard::sim
