#include "hanguard/sim/event_queue.hpp"

#include <stdexcept>

namespace hanguard::sim {

int lane_of(EventKind kind) {
    switch (kind) {
        case EventKind::FlowAction: return 0;
        case EventKind::PacketArrival:
        case EventKind::ControlDelivery:
        case EventKind::TimerFire: return 1;
        case EventKind::PollTick: return 2;
    }
    return 1;
}

void EventQueue::schedule(SimTime at, EventKind kind, std::function<void()> action) {
    if (at < now_) throw std::logic_error("event scheduled in the past");
    heap_.push(SimEvent{at, lane_of(kind), next_seq_++, kind, std::move(action)});
}

bool EventQueue::step() {
    if (heap_.empty()) return false;
    auto ev = heap_.top();
    heap_.pop();
    now_ = ev.at;
    ++processed_;
    ev.action();
    return true;
}

void EventQueue::run() {
    while (step()) {
    }
}

}  // namespace hanguard::sim
