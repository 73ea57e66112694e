#pragma once

#include <cstdint>

#include "heatlens/rng.hpp"
#include "heatlens/tensor.hpp"

namespace heatlens {

// One synthetic optical/SAR pair sharing scene geometry. Radiometric design
// (relied on by structure-mask tests): backgrounds stay below ~0.45 gray,
// polygon interiors above ~0.6 before speckle, so a 0.5 threshold separates
// structures in the optical view and a 0.45 threshold does in the SAR view
// after light denoising.
template <typename T>
struct SynthPair {
  Tensor<T> optical;  // [3,H,W] in [0,1]
  Tensor<T> sar;      // [1,H,W] in [0,1]
  Tensor<T> support;  // [1,H,W] binary union of polygon interiors
};

namespace detail {

struct Polygon {
  std::vector<double> vx, vy;  // convex, counter-clockwise

  bool contains(double px, double py) const {
    const std::size_t n = vx.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      const double cross =
          (vx[j] - vx[i]) * (py - vy[i]) - (vy[j] - vy[i]) * (px - vx[i]);
      if (cross < 0.0) return false;
    }
    return true;
  }
};

// convex by construction: vertices on an ellipse at sorted angles
inline Polygon random_polygon(rng::Xoshiro256pp& r, double size) {
  Polygon poly;
  const double cx = r.uniform(0.18, 0.82) * size;
  const double cy = r.uniform(0.18, 0.82) * size;
  const double a = r.uniform(0.08, 0.22) * size;
  const double b = r.uniform(0.08, 0.22) * size;
  const double rot = r.uniform(0.0, 2.0 * 3.14159265358979323846);
  const int verts = 3 + static_cast<int>(r.next() % 6);  // 3..8
  std::vector<double> angles(verts);
  for (auto& ang : angles) ang = r.uniform(0.0, 2.0 * 3.14159265358979323846);
  std::sort(angles.begin(), angles.end());
  const double cr = std::cos(rot), sr = std::sin(rot);
  for (double ang : angles) {
    const double ex = a * std::cos(ang), ey = b * std::sin(ang);
    poly.vx.push_back(cx + ex * cr - ey * sr);
    poly.vy.push_back(cy + ex * sr + ey * cr);
  }
  return poly;
}

}  // namespace detail

// Renders 2..6 random convex polygons over a softly textured background.
// The optical view fills each polygon with a bright RGB color plus a linear
// shading ramp; the SAR view reuses the identical geometry with per-polygon
// reflectivity and multiplicative gamma speckle (shape 32, unit mean).
// Deterministic per seed; all values clamped to [0,1].
template <typename T>
SynthPair<T> synth_pair(std::uint64_t seed, std::size_t size) {
  rng::Xoshiro256pp r(rng::derive_seed(seed, 0x5CE7E));
  const std::size_t hw = size * size;

  // background: smooth sinusoid mix, gray kept in ~[0.28, 0.45]
  std::vector<double> bg(hw);
  {
    const double base = r.uniform(0.30, 0.40);
    const double fx1 = r.uniform(1.0, 3.0), fy1 = r.uniform(1.0, 3.0);
    const double fx2 = r.uniform(3.0, 6.0), fy2 = r.uniform(3.0, 6.0);
    const double p1 = r.uniform(0.0, 6.28), p2 = r.uniform(0.0, 6.28);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
        bg[y * size + x] = base + 0.03 * std::sin(6.283 * (fx1 * u + fy1 * v) + p1) +
                           0.015 * std::sin(6.283 * (fx2 * u - fy2 * v) + p2);
      }
  }

  const int npoly = 2 + static_cast<int>(r.next() % 5);  // 2..6
  std::vector<detail::Polygon> polys;
  std::vector<std::array<double, 3>> fill_rgb;
  std::vector<double> fill_sar;
  std::vector<std::array<double, 2>> shade_dir;
  for (int i = 0; i < npoly; ++i) {
    polys.push_back(detail::random_polygon(r, static_cast<double>(size)));
    const double brightness = r.uniform(0.70, 0.90);
    // zero-sum channel jitter keeps the gray level at `brightness`
    const double j1 = r.uniform(-0.08, 0.08), j2 = r.uniform(-0.08, 0.08);
    fill_rgb.push_back({brightness + j1, brightness + j2, brightness - j1 - j2});
    fill_sar.push_back(r.uniform(0.65, 0.85));
    const double ang = r.uniform(0.0, 6.28);
    shade_dir.push_back({std::cos(ang), std::sin(ang)});
  }

  std::vector<T> opt(3 * hw), sar(hw), sup(hw, T(0));
  rng::Xoshiro256pp speckle(rng::derive_seed(seed, 0x5A12));
  const double speckle_shape = 32.0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t i = y * size + x;
      double rch = bg[i], gch = bg[i], bch = bg[i];
      double reflect = 0.55 * bg[i];  // sar background sits lower
      bool inside = false;
      for (int k = 0; k < npoly; ++k) {
        if (!polys[k].contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
          continue;
        inside = true;
        const double ramp =
            1.0 + 0.10 * (shade_dir[k][0] * (2.0 * x / size - 1.0) +
                          shade_dir[k][1] * (2.0 * y / size - 1.0));
        rch = fill_rgb[k][0] * ramp;
        gch = fill_rgb[k][1] * ramp;
        bch = fill_rgb[k][2] * ramp;
        reflect = fill_sar[k];
      }
      const double sp = speckle.gamma(speckle_shape) / speckle_shape;
      auto clamp01 = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
      opt[i] = static_cast<T>(clamp01(rch));
      opt[hw + i] = static_cast<T>(clamp01(gch));
      opt[2 * hw + i] = static_cast<T>(clamp01(bch));
      sar[i] = static_cast<T>(clamp01(reflect * sp));
      if (inside) sup[i] = T(1);
    }

  SynthPair<T> out;
  out.optical = Tensor<T>(Shape{3, size, size}, std::move(opt));
  out.sar = Tensor<T>(Shape{1, size, size}, std::move(sar));
  out.support = Tensor<T>(Shape{1, size, size}, std::move(sup));
  return out;
}

}  // namespace heatlens
