#pragma once

#include <cmath>
#include <cstdint>

namespace rltir {

/// Running mean / variance (Welford's single-pass update).
struct WelfordAccumulator {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  /// Sample variance; zero until two observations are in.
  double variance() const {
    return count >= 2 ? m2 / static_cast<double>(count - 1) : 0.0;
  }

  double stddev() const { return std::sqrt(variance()); }

  void reset() { *this = WelfordAccumulator{}; }

  bool operator==(const WelfordAccumulator&) const = default;
};

}  // namespace rltir
