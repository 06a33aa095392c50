#pragma once

#include <chrono>
#include <cstdint>

namespace twinbench {

/// Timestamps and durations share one representation: nanoseconds since the
/// run's epoch (virtual time in sim mode, steady clock in tcp mode).
using Nanos = std::chrono::nanoseconds;

inline double to_ms(Nanos d)
{
    return std::chrono::duration<double, std::milli>(d).count();
}

inline Nanos from_ms(double ms)
{
    return Nanos{static_cast<std::int64_t>(ms * 1e6 + (ms >= 0 ? 0.5 : -0.5))};
}

} // namespace twinbench
