#include "auss/stats.hpp"

#include <algorithm>

#include "auss/common.hpp"

namespace auss::stats {

double least_squares_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw InvalidArgument("least_squares_slope: length mismatch");
  }
  if (x.size() < 2) {
    return 0.0;
  }
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) {
    return 0.0;
  }
  return sxy / sxx;
}

double mean(std::span<const double> values) {
  if (values.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (double v : values) {
    sum += v;
  }
  return sum / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  if (values.empty()) {
    throw InvalidArgument("median of empty range");
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) {
    return values[n / 2];
  }
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) {
    throw InvalidArgument("percentile of empty range");
  }
  if (!(p > 0.0 && p <= 100.0)) {
    throw InvalidArgument("percentile: p must be in (0, 100]");
  }
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

} // namespace auss::stats
