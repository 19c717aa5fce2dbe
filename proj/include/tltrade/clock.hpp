#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <limits>

namespace tlt {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now_seconds() const = 0;
};

class SteadyClock final : public Clock {
 public:
  double now_seconds() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  }
};

// Deterministic clock for tests: every read advances time by a fixed step.
class TickingClock final : public Clock {
 public:
  explicit TickingClock(double step_seconds, double start_seconds = 0.0)
      : step_(step_seconds), start_(start_seconds) {}
  double now_seconds() const override {
    return start_ + step_ * static_cast<double>(ticks_.fetch_add(1));
  }

 private:
  double step_;
  double start_;
  mutable std::atomic<std::uint64_t> ticks_{0};
};

class DeadlineExceeded : public std::exception {
 public:
  const char* what() const noexcept override { return "time limit exceeded"; }
};

class Deadline {
 public:
  Deadline(const Clock& clock, double limit_seconds)
      : clock_(&clock), start_(clock.now_seconds()), limit_(limit_seconds) {}

  static Deadline unlimited(const Clock& clock) {
    return Deadline(clock, std::numeric_limits<double>::infinity());
  }

  double elapsed_seconds() const { return clock_->now_seconds() - start_; }
  bool expired() const { return elapsed_seconds() >= limit_; }
  void check() const {
    if (expired()) throw DeadlineExceeded();
  }
  double limit_seconds() const { return limit_; }
  const Clock& clock() const { return *clock_; }

 private:
  const Clock* clock_;
  double start_;
  double limit_;
};

}  // namespace tlt
