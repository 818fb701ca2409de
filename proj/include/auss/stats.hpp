#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace auss::stats {

/// Ordinary least-squares slope of y on x. Fewer than two distinct x values
/// yields 0.
double least_squares_slope(std::span<const double> x, std::span<const double> y);

/// Arithmetic mean; 0 for an empty range.
double mean(std::span<const double> values);

/// Median (average of the two middle values for even counts). Throws on empty.
double median(std::vector<double> values);

/// Nearest-rank percentile, p in (0, 100]. Throws on empty.
double percentile(std::vector<double> values, double p);

inline double logistic(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

} // namespace auss::stats
