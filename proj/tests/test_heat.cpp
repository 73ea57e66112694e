#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "heatlens/bench.hpp"
#include "heatlens/gradcheck.hpp"
#include "heatlens/heat.hpp"
#include "heatlens/rng.hpp"

using namespace heatlens;

namespace {

Tensor<double> rnd(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  rng::Xoshiro256pp r(seed);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = r.uniform(lo, hi);
  return Tensor<double>(shape, std::move(v));
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2(const Tensor<double>& a) {
  double s = 0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

double channel_mean(const Tensor<double>& t, std::size_t c) {
  const std::size_t hw = t.shape()[1] * t.shape()[2];
  double s = 0;
  for (std::size_t i = 0; i < hw; ++i) s += t[c * hw + i];
  return s / hw;
}

}  // namespace

TEST_CASE("k = 0 leaves the signal untouched") {
  auto plan = SpectralPlan<double>::make(12, 12);
  auto x = rnd({2, 12, 12}, 3);
  CHECK(max_abs_diff(hco_apply(plan, x, 0.0, 5.0), x) < 1e-10);
  CHECK(max_abs_diff(hco_apply(plan, x, 1.0, 0.0), x) < 1e-10);
}

TEST_CASE("long diffusion flattens to the channel mean") {
  auto plan = SpectralPlan<double>::make(16, 16);
  auto x = rnd({1, 16, 16}, 5);
  auto out = hco_apply(plan, x, 1.0, 1e6);
  const double m = channel_mean(x, 0);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - m) < 1e-8);
}

TEST_CASE("mean conservation for any admissible k, t") {
  auto plan = SpectralPlan<double>::make(10, 14);
  rng::Xoshiro256pp r(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = rnd({2, 10, 14}, 100 + trial);
    auto k = derive_k(rnd({2, 10, 14}, 200 + trial));
    const double t = r.uniform(0.0, 3.0);
    auto out = hco_apply(plan, x, k, t);
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(std::abs(channel_mean(out, c) - channel_mean(x, c)) < 1e-10);
  }
}

TEST_CASE("energy dissipation") {
  auto plan = SpectralPlan<double>::make(12, 12);
  rng::Xoshiro256pp r(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = rnd({1, 12, 12}, 300 + trial);
    const double k = r.uniform(0.0, 2.0), t = r.uniform(0.0, 2.0);
    CHECK(l2(hco_apply(plan, x, k, t)) <= l2(x) + 1e-12);
  }
  // strict decrease for non-constant input with k t > 0
  auto x = rnd({1, 12, 12}, 999);
  CHECK(l2(hco_apply(plan, x, 1.0, 0.5)) < l2(x));
}

TEST_CASE("semigroup: t1 then t2 equals t1 + t2") {
  auto plan = SpectralPlan<double>::make(16, 16);
  auto x = rnd({2, 16, 16}, 29);
  auto k = derive_k(rnd({2, 16, 16}, 31));
  auto two_hops = hco_apply(plan, hco_apply(plan, x, k, 0.4), k, 0.9);
  auto one_hop = hco_apply(plan, x, k, 1.3);
  CHECK(max_abs_diff(two_hops, one_hop) < 1e-8);
}

TEST_CASE("linearity in the signal") {
  auto plan = SpectralPlan<double>::make(12, 12);
  auto x = rnd({1, 12, 12}, 37), y = rnd({1, 12, 12}, 41);
  auto k = derive_k(rnd({1, 12, 12}, 43));
  auto mixed = hco_apply(plan, add(scale(x, 0.6), scale(y, -0.8)), k, 0.7);
  auto split = add(scale(hco_apply(plan, x, k, 0.7), 0.6),
                   scale(hco_apply(plan, y, k, 0.7), -0.8));
  CHECK(max_abs_diff(mixed, split) < 1e-10);
}

TEST_CASE("attenuation is strictly monotone along each frequency axis") {
  // gain = exp(-k lambda t); lambda increases strictly in u and in v
  auto plan = SpectralPlan<double>::make(16, 16);
  const auto& lam = plan.lap_symbol().values();
  for (std::size_t u = 0; u < 16; ++u)
    for (std::size_t v = 1; v < 16; ++v) {
      CHECK(lam[u * 16 + v] > lam[u * 16 + v - 1]);
      CHECK(lam[v * 16 + u] > lam[(v - 1) * 16 + u]);
    }
}

TEST_CASE("contract violations") {
  auto plan = SpectralPlan<double>::make(8, 8);
  auto x = rnd({1, 8, 8}, 47);
  CHECK_THROWS_AS(hco_apply(plan, x, -0.1, 1.0), std::runtime_error);
  CHECK_THROWS_AS(hco_apply(plan, x, 1.0, -1.0), std::runtime_error);
  auto bad_k = Tensor<double>({1, 8, 8}, [] {
    std::vector<double> v(64, 0.5);
    v[10] = -1e-9;
    return v;
  }());
  CHECK_THROWS_AS(hco_apply(plan, x, bad_k, 1.0), std::runtime_error);
}

TEST_CASE("derive_k: softplus behavior") {
  auto k0 = derive_k(Tensor<double>::zeros({2, 3, 3}));
  for (std::size_t i = 0; i < k0.size(); ++i)
    CHECK(k0[i] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // monotone toward zero from below
  double prev = derive_k(Tensor<double>::scalar(-1.0)).item();
  for (double x : {-3.0, -8.0, -20.0, -40.0}) {
    const double k = derive_k(Tensor<double>::scalar(x)).item();
    CHECK(k > 0.0);
    CHECK(k < prev);
    prev = k;
  }
}

TEST_CASE("correction learner") {
  auto z = rnd({2, 4, 4}, 53);
  CHECK(correction_learn(z, Tensor<double>::zeros({2, 4, 4}), Activation::identity).values() ==
        z.values());

  auto s = rnd({2, 4, 4}, 59);
  auto act_only = correction_learn(Tensor<double>::zeros({2, 4, 4}), s);
  auto direct = gelu(s);
  CHECK(max_abs_diff(act_only, direct) == 0.0);

  CHECK_THROWS_AS(correction_learn(z, rnd({2, 4, 5}, 1)), std::invalid_argument);

  // gradient reaches both operands
  Tape<double> tape;
  auto zt = tape.leaf(z);
  auto st = tape.leaf(s);
  auto g = tape.backward(sum(mul(correction_learn(zt, st), rnd({2, 4, 4}, 61))));
  CHECK(g.reached(zt));
  CHECK(g.reached(st));
  double nz = 0, ns = 0;
  for (double v : g.at(zt).values()) nz += std::abs(v);
  for (double v : g.at(st).values()) ns += std::abs(v);
  CHECK(nz > 0);
  CHECK(ns > 0);
}

namespace {

HcoParams<double> identity_block_params(std::size_t c, std::size_t g) {
  HcoParams<double> p;
  p.fve_raw = rnd({c, g, g}, 67);
  p.sce = Tensor<double>::zeros({c, g, g});
  p.t = 1.0;
  std::vector<double> eye(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) eye[i * c + i] = 1.0;
  p.proj_in_w = Tensor<double>({c, c, 1, 1}, eye);
  p.proj_in_b = Tensor<double>::zeros({c});
  p.proj_out_w = Tensor<double>({c, c, 1, 1}, eye);
  p.proj_out_b = Tensor<double>::zeros({c});
  p.mlp1_w = Tensor<double>::zeros({4 * c, c, 1, 1});
  p.mlp1_b = Tensor<double>::zeros({4 * c});
  p.mlp2_w = Tensor<double>::zeros({c, 4 * c, 1, 1});
  p.mlp2_b = Tensor<double>::zeros({c});
  p.cl_act = Activation::identity;
  return p;
}

}  // namespace

TEST_CASE("block composition audit: identity projections reduce to z + HCO(z)") {
  const std::size_t c = 2, g = 8;
  auto plan = SpectralPlan<double>::make(g, g);
  auto p = identity_block_params(c, g);
  auto z = rnd({c, g, g}, 71);
  auto out = hco_block(plan, p, z);
  auto expect = add(z, hco_apply(plan, z, derive_k(p.fve_raw), p.t));
  CHECK(max_abs_diff(out, expect) < 1e-12);
}

TEST_CASE("block preserves shape across grids") {
  for (std::size_t g : {8ul, 16ul, 56ul}) {
    auto plan = SpectralPlan<double>::make(g, g);
    auto p = identity_block_params(3, g);
    auto z = rnd({3, g, g}, 300 + g);
    CHECK(hco_block(plan, p, z).shape() == z.shape());
  }
  auto plan = SpectralPlan<double>::make(8, 8);
  auto p = identity_block_params(3, 8);
  CHECK_THROWS_AS(hco_block(plan, p, rnd({3, 8, 9}, 1)), std::invalid_argument);
}

TEST_CASE("full block gradient check") {
  auto report = gradcheck_block(7);
  CHECK(report.all_pass);
  CHECK(report.worst < kGradCheckTol);
}

TEST_CASE("hco_apply matches the explicit-Euler oracle") {
  auto x2d = rnd({16, 16}, 73);
  auto plan = SpectralPlan<double>::make(16, 16);
  auto spectral = hco_apply(plan, x2d, 0.5, 0.1);
  auto fd1 = heat_fd_oracle(x2d, 0.5, 0.1, 1e-4);
  auto fd2 = heat_fd_oracle(x2d, 0.5, 0.1, 5e-5);
  auto rel = [&](const Tensor<double>& a, const Tensor<double>& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += (a[i] - b[i]) * (a[i] - b[i]);
      den += b[i] * b[i];
    }
    return std::sqrt(num / den);
  };
  const double e1 = rel(spectral, fd1);
  const double e2 = rel(spectral, fd2);
  CHECK(e1 < 1e-3);
  CHECK(e1 / e2 > 1.5);
  CHECK(e1 / e2 < 2.5);
}

TEST_CASE("field resize for size transfer") {
  auto f = rnd({2, 4, 4}, 79);
  CHECK(resize_bilinear(f, 4, 4).values() == f.values());

  // a linear ramp resamples exactly under align-corners bilinear
  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) ramp[i * 4 + j] = static_cast<double>(j);
  auto up = resize_bilinear(Tensor<double>({1, 4, 4}, ramp), 4, 7);
  for (std::size_t j = 0; j < 7; ++j)
    CHECK(up[j] == doctest::Approx(3.0 * j / 6.0).epsilon(1e-12));
}
