#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "rsat/errors.hpp"

namespace rsat {

/// Fractional (average) ranks, 1-based; ties share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation of two equal-length vectors.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw DegenerateInput("pearson: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw LengthMismatch("spearman_rho: length " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
  if (x.size() < 3)
    throw LengthMismatch("spearman_rho: need at least 3 entries, got " +
                         std::to_string(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw NonFinite("spearman_rho: non-finite input");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  try {
    return pearson(rx, ry);
  } catch (const DegenerateInput&) {
    throw DegenerateInput("spearman_rho: constant input (zero rank variance)");
  }
}

inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  return spearman_rho(std::span<const double>(x), std::span<const double>(y));
}

}  // namespace rsat
