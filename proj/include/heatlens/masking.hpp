#pragma once

#include <cstdint>
#include <utility>

#include "heatlens/dct.hpp"
#include "heatlens/rng.hpp"

namespace heatlens {

// Description of one sector mask over an (m, n) coefficient grid. The sector
// is anchored at the DC corner: coefficients with u^2 + v^2 < radius^2 form
// the LOW region, ties and everything beyond go HIGH. realized_rate is the
// achieved HIGH fraction, the closest to target_rate reachable by an integer
// radius.
struct MaskSpec {
  double target_rate = 0.0;
  std::size_t realized_radius = 0;
  double realized_rate = 0.0;
  std::uint64_t seed = 0;
};

// count of coefficients strictly inside radius r (the LOW region)
std::size_t sector_low_count(std::size_t m, std::size_t n, std::size_t radius);

// Integer radius whose realized HIGH fraction is closest to target_rate
// (binary search over the monotone realized(r); ties resolved toward the
// smaller radius).
MaskSpec mask_for_rate(std::size_t m, std::size_t n, double target_rate, std::uint64_t seed);

// target_rate drawn uniformly from [0.20, 0.30]; deterministic per seed
MaskSpec sample_mask(std::size_t m, std::size_t n, std::uint64_t seed);

namespace detail {
template <typename T>
Tensor<T> sector_low_mask(std::size_t m, std::size_t n, std::size_t radius) {
  std::vector<T> mask(m * n, T(0));
  const std::size_t r2 = radius * radius;
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t v = 0; v < n; ++v)
      if (u * u + v * v < r2) mask[u * n + v] = T(1);
  return Tensor<T>(Shape{m, n}, std::move(mask));
}
}  // namespace detail

// Split x into complementary spatial-domain components: low = everything the
// sector keeps, high = everything it masks. Complementary binary masks on the
// same coefficients make low + high reconstruct x up to rounding.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_frequency(const SpectralPlan<T>& plan, const Tensor<T>& x,
                                                const MaskSpec& mask) {
  Tensor<T> freq = dct2(plan, x);
  Tensor<T> mlow = detail::sector_low_mask<T>(plan.rows(), plan.cols(), mask.realized_radius);
  std::vector<T> mh(mlow.size());
  for (std::size_t i = 0; i < mh.size(); ++i) mh[i] = T(1) - mlow[i];
  Tensor<T> mhigh(mlow.shape(), std::move(mh));
  return {idct2(plan, mul(freq, mlow)), idct2(plan, mul(freq, mhigh))};
}

template <typename T>
struct PairedComponents {
  Tensor<T> opt_low, opt_high;  // [3,m,n]
  Tensor<T> sar_low, sar_high;  // [1,m,n]
  MaskSpec opt_mask, sar_mask;
};

// Masks a batch of paired optical/SAR items. Each item gets a seed-derived
// sub-stream; within an item the optical and SAR masks are independent draws,
// so paired modalities see different sectors but the whole batch replays
// exactly from one seed.
template <typename T>
std::vector<PairedComponents<T>> mask_batch(
    const SpectralPlan<T>& plan, const std::vector<std::pair<Tensor<T>, Tensor<T>>>& batch,
    std::uint64_t seed) {
  std::vector<PairedComponents<T>> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::uint64_t item = rng::derive_seed(seed, i);
    PairedComponents<T> pc;
    pc.opt_mask = sample_mask(plan.rows(), plan.cols(), rng::derive_seed(item, 0));
    pc.sar_mask = sample_mask(plan.rows(), plan.cols(), rng::derive_seed(item, 1));
    auto opt = split_frequency(plan, batch[i].first, pc.opt_mask);
    auto sar = split_frequency(plan, batch[i].second, pc.sar_mask);
    pc.opt_low = std::move(opt.first);
    pc.opt_high = std::move(opt.second);
    pc.sar_low = std::move(sar.first);
    pc.sar_high = std::move(sar.second);
    out.push_back(std::move(pc));
  }
  return out;
}

}  // namespace heatlens
