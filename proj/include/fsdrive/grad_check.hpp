#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsdrive/error.hpp"
#include "fsdrive/rng.hpp"

namespace fsdrive {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::size_t checked = 0;
  std::optional<std::size_t> non_finite_coordinate;

  bool passed(double tolerance) const { return !non_finite_coordinate && max_rel_error <= tolerance; }
};

/// Relative error |a - n| / max(1, |a| + |n|).
inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic) + std::abs(numeric));
}

/// Central finite differences of `scalar_fn` with respect to the coordinates
/// of `point` (mutated in place and restored), compared against `analytic`.
/// When `coordinates` is empty every coordinate is checked.
template <typename ScalarFn>
GradCheckResult grad_check(ScalarFn&& scalar_fn, std::span<double> point, std::span<const double> analytic,
                           double h, std::span<const std::size_t> coordinates = {}) {
  require(h >= 1e-7 && h <= 1e-4, "grad_check step must lie in [1e-7, 1e-4]");
  if (point.size() != analytic.size())
    fail(ErrorKind::shape_mismatch, "grad_check: " + std::to_string(point.size()) + " coordinates but " +
                                        std::to_string(analytic.size()) + " analytic gradients");
  GradCheckResult result;
  auto check_one = [&](std::size_t i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double plus = scalar_fn();
    point[i] = saved - h;
    const double minus = scalar_fn();
    point[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    ++result.checked;
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      if (!result.non_finite_coordinate) result.non_finite_coordinate = i;
      return;
    }
    const double err = grad_rel_error(analytic[i], numeric);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_coordinate = i;
    }
  };
  if (coordinates.empty()) {
    for (std::size_t i = 0; i < point.size(); ++i) check_one(i);
  } else {
    for (auto i : coordinates) check_one(i);
  }
  return result;
}

/// Up to `limit` distinct coordinates of [0, n), sorted. All of them when n <= limit.
inline std::vector<std::size_t> sample_coordinates(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= limit) return idx;
  for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace fsdrive
