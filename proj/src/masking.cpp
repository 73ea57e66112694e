#include "heatlens/masking.hpp"

#include <cmath>

namespace heatlens {

std::size_t sector_low_count(std::size_t m, std::size_t n, std::size_t radius) {
  const std::size_t r2 = radius * radius;
  std::size_t count = 0;
  for (std::size_t u = 0; u < m; ++u) {
    if (u * u >= r2) break;  // rows only get farther
    // largest v with u^2 + v^2 < r^2, i.e. v <= ceil(sqrt(r2 - u2)) - 1
    const std::size_t rem = r2 - u * u;
    std::size_t v = static_cast<std::size_t>(std::sqrt(static_cast<double>(rem)));
    while (v * v >= rem) --v;       // v^2 < rem required (strict)
    while ((v + 1) * (v + 1) < rem) ++v;
    count += std::min(v + 1, n);
  }
  return count;
}

MaskSpec mask_for_rate(std::size_t m, std::size_t n, double target_rate, std::uint64_t seed) {
  if (m < 2 || n < 2)
    fail_shape("mask_for_rate",
               "degenerate extents " + std::to_string(m) + "x" + std::to_string(n));
  if (target_rate < 0.0 || target_rate > 1.0)
    fail_value("mask_for_rate", "target rate must lie in [0, 1]");
  const double total = static_cast<double>(m) * static_cast<double>(n);
  auto realized = [&](std::size_t r) {
    return 1.0 - static_cast<double>(sector_low_count(m, n, r)) / total;
  };
  // realized(r) is non-increasing in r; find the first r at or below target,
  // then compare with its neighbor.
  std::size_t lo = 0;
  std::size_t hi = static_cast<std::size_t>(
                       std::ceil(std::sqrt(static_cast<double>(m * m + n * n)))) +
                   1;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (realized(mid) > target_rate)
      lo = mid + 1;
    else
      hi = mid;
  }
  std::size_t best = lo;
  if (lo > 0) {
    const double d_at = std::abs(realized(lo) - target_rate);
    const double d_below = std::abs(realized(lo - 1) - target_rate);
    if (d_below <= d_at) best = lo - 1;
  }
  MaskSpec spec;
  spec.target_rate = target_rate;
  spec.realized_radius = best;
  spec.realized_rate = realized(best);
  spec.seed = seed;
  return spec;
}

MaskSpec sample_mask(std::size_t m, std::size_t n, std::uint64_t seed) {
  rng::Xoshiro256pp stream(seed);
  return mask_for_rate(m, n, stream.uniform(0.20, 0.30), seed);
}

}  // namespace heatlens
