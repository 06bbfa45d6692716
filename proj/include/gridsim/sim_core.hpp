#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gridsim/error.hpp"

namespace gridsim {

// Simulated seconds since the start of a run.
class SimTime {
 public:
  constexpr SimTime() = default;
  constexpr explicit SimTime(double seconds) : seconds_(seconds) {}

  constexpr double seconds() const noexcept { return seconds_; }

  friend constexpr auto operator<=>(SimTime, SimTime) = default;
  friend constexpr SimTime operator+(SimTime t, double dt) { return SimTime(t.seconds_ + dt); }
  friend constexpr double operator-(SimTime a, SimTime b) { return a.seconds_ - b.seconds_; }

 private:
  double seconds_ = 0.0;
};

enum class EventKind {
  job_submit,
  match_request,
  transfer_start,
  transfer_complete,
  exec_start,
  exec_complete,
  queue_poll,
  metric_sample,
  reconfigure,
  reservation_start,
  quota_period,
};

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::job_submit: return "job-submit";
    case EventKind::match_request: return "match-request";
    case EventKind::transfer_start: return "transfer-start";
    case EventKind::transfer_complete: return "transfer-complete";
    case EventKind::exec_start: return "exec-start";
    case EventKind::exec_complete: return "exec-complete";
    case EventKind::queue_poll: return "queue-poll";
    case EventKind::metric_sample: return "metric-sample";
    case EventKind::reconfigure: return "reconfigure";
    case EventKind::reservation_start: return "reservation-start";
    case EventKind::quota_period: return "quota-period";
  }
  return "unknown";
}

inline constexpr std::size_t kNoJob = std::numeric_limits<std::size_t>::max();

struct Event {
  SimTime time;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::queue_poll;
  std::string target;
  std::size_t job = kNoJob;  // index into the run's job table
  std::uint64_t tag = 0;     // kind-specific (transfer id, ...)

  std::string describe() const {
    return std::string(to_string(kind)) + "@" + std::to_string(time.seconds()) + "#" +
           std::to_string(seq) + "(" + target + ")";
  }
};

struct RunStats {
  std::uint64_t events_processed = 0;
  SimTime clock;
};

// Scheduling into the past is a programming error, not a scenario error.
class ScheduleError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Event queue plus virtual clock. Events are totally ordered by (time, seq);
// seq is assigned at scheduling, so equal-time events run FIFO.
class Engine {
 public:
  SimTime now() const noexcept { return now_; }
  bool empty() const noexcept { return heap_.empty(); }
  std::size_t pending() const noexcept { return heap_.size(); }
  std::uint64_t scheduled_count() const noexcept { return next_seq_; }

  std::uint64_t schedule(SimTime time, EventKind kind, std::string target,
                         std::size_t job = kNoJob, std::uint64_t tag = 0) {
    if (!std::isfinite(time.seconds())) throw ScheduleError("event time is not finite");
    if (time < now_) {
      throw ScheduleError("cannot schedule " + std::string(to_string(kind)) + " at " +
                          std::to_string(time.seconds()) + " before now " +
                          std::to_string(now_.seconds()));
    }
    Event ev{time, next_seq_++, kind, std::move(target), job, tag};
    heap_.push_back(std::move(ev));
    std::push_heap(heap_.begin(), heap_.end(), Later{});
    return heap_.back().seq;
  }

  const Event* peek() const noexcept { return heap_.empty() ? nullptr : &heap_.front(); }

  // Processes every event with time <= t_end, then sets the clock to t_end.
  template <typename Handler>
  RunStats run_until(SimTime t_end, Handler&& handler) {
    return run_while(t_end, [] { return true; }, std::forward<Handler>(handler), true);
  }

  // Like run_until but stops early (clock left at the last event) once
  // keep_going() returns false.
  template <typename Pred, typename Handler>
  RunStats run_while(SimTime t_end, Pred&& keep_going, Handler&& handler,
                     bool advance_to_end = false) {
    if (t_end < now_) throw ScheduleError("run_until target lies in the past");
    RunStats stats;
    while (!heap_.empty() && heap_.front().time <= t_end) {
      if (!keep_going()) {
        stats.clock = now_;
        return stats;
      }
      std::pop_heap(heap_.begin(), heap_.end(), Later{});
      Event ev = std::move(heap_.back());
      heap_.pop_back();
      now_ = ev.time;
      try {
        handler(ev);
      } catch (const SimulationError&) {
        throw;
      } catch (const std::exception& e) {
        throw SimulationError(ev.describe(), e.what());
      }
      ++stats.events_processed;
    }
    if (advance_to_end) now_ = t_end;
    stats.clock = now_;
    return stats;
  }

  // Removes pending events matching pred.
  template <typename Pred>
  std::size_t discard_if(Pred&& pred) {
    const auto before = heap_.size();
    std::erase_if(heap_, pred);
    std::make_heap(heap_.begin(), heap_.end(), Later{});
    return before - heap_.size();
  }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const noexcept {
      if (a.time != b.time) return a.time > b.time;
      return a.seq > b.seq;
    }
  };

  std::vector<Event> heap_;
  SimTime now_{};
  std::uint64_t next_seq_ = 0;
};

}  // namespace gridsim
