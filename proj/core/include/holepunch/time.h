#pragma once

#include <chrono>
#include <cstdint>
#include <string>

namespace holepunch {

// Virtual clock of the simulator. Only used as a time_point tag; it has no
// now() because time advances exclusively through the event engine.
struct SimClock {
  using rep = std::int64_t;
  using period = std::nano;
  using duration = std::chrono::nanoseconds;
  using time_point = std::chrono::time_point<SimClock, duration>;
  static constexpr bool is_steady = true;
};

using Duration = std::chrono::nanoseconds;
using VirtualTime = SimClock::time_point;

inline constexpr VirtualTime kTimeZero{};

constexpr Duration millis(std::int64_t ms) { return std::chrono::milliseconds(ms); }
constexpr Duration micros(std::int64_t us) { return std::chrono::microseconds(us); }

// Rounds to the nearest nanosecond.
Duration from_ms(double ms);

double to_ms(Duration d);
inline double to_ms(VirtualTime t) { return to_ms(t.time_since_epoch()); }

// Exact decimal milliseconds with trailing zeros trimmed: 250, 209.6, 0.00096.
std::string format_ms(Duration d);
inline std::string format_ms(VirtualTime t) { return format_ms(t.time_since_epoch()); }

}  // namespace holepunch
