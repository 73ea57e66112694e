#include "heatlens/bench.hpp"

#include <algorithm>
#include <cmath>
#include <new>

namespace heatlens {

namespace {

std::uint64_t u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

}  // namespace

// Component counts mirror the ops one spectral block actually executes on a
// g x g grid with C channels (matmul DCT path):
//   dct/idct: C*(g*g*g + g*g*g)*2 = 4*C*g^3 each (two dense contractions)
//   filter:   4 flops per coefficient (k*lambda, *t, exp, apply)
//   cl:       add + activation (activation counted as 6 flops)
//   proj:     two pointwise C->C convs with bias
//   mlp:      C->4C->C pointwise with bias, activation on 4C, both residuals
// embed is the stride-4 patchify from 3 input channels at token resolution.
FlopsReport flops_hco_stage(std::size_t side, std::size_t channels, std::size_t depth) {
  FlopsReport r;
  r.side = side;
  r.tokens = side * side;
  const std::uint64_t g2 = u64(side) * side;
  const std::uint64_t g3 = g2 * side;
  const std::uint64_t C = u64(channels), D = u64(depth);
  r.components.emplace_back("embed", g2 * C * (3 * 16) * 2 + g2 * C);
  r.components.emplace_back("cl", D * 7 * C * g2);
  r.components.emplace_back("proj", D * 2 * (2 * C * C * g2 + C * g2));
  r.components.emplace_back("dct", D * 4 * C * g3);
  r.components.emplace_back("filter", D * 4 * C * g2);
  r.components.emplace_back("idct", D * 4 * C * g3);
  r.components.emplace_back("mlp", D * (16 * C * C * g2 + 5 * C * g2 + 24 * C * g2));
  r.components.emplace_back("residual", D * 2 * C * g2);
  return r;
}

// Global self-attention over the same token grid: qkv + output projections,
// score and context products (the N^2 terms), 5-flop softmax per entry,
// 4x-expansion MLP.
FlopsReport flops_attention_stage(std::size_t side, std::size_t channels, std::size_t depth) {
  FlopsReport r;
  r.side = side;
  r.tokens = side * side;
  const std::uint64_t N = u64(side) * side;
  const std::uint64_t C = u64(channels), D = u64(depth);
  r.components.emplace_back("embed", N * C * (3 * 16) * 2 + N * C);
  r.components.emplace_back("attention-qkv", D * 3 * 2 * N * C * C);
  r.components.emplace_back("attention-scores", D * 2 * N * N * C);
  r.components.emplace_back("softmax", D * (N * N + 5 * N * N));
  r.components.emplace_back("attention-context", D * 2 * N * N * C);
  r.components.emplace_back("attention-out", D * 2 * N * C * C);
  r.components.emplace_back("mlp", D * (16 * N * C * C + 24 * C * N));
  r.components.emplace_back("residual", D * 2 * C * N);
  return r;
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    fail_value("fit_loglog_slope", "need >= 2 matched points");
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  return (n * sxy - sx * sy) / denom;
}

namespace {

double exponent_vs_tokens(const std::vector<std::size_t>& sides, std::size_t channels,
                          std::size_t depth,
                          FlopsReport (*model)(std::size_t, std::size_t, std::size_t)) {
  std::vector<double> tokens, flops;
  for (std::size_t s : sides) {
    const FlopsReport r = model(s, channels, depth);
    tokens.push_back(static_cast<double>(r.tokens));
    flops.push_back(static_cast<double>(r.total()));
  }
  return fit_loglog_slope(tokens, flops);
}

}  // namespace

double hco_flops_exponent(const std::vector<std::size_t>& sides, std::size_t channels,
                          std::size_t depth) {
  return exponent_vs_tokens(sides, channels, depth, flops_hco_stage);
}

double attention_flops_exponent(const std::vector<std::size_t>& sides, std::size_t channels,
                                std::size_t depth) {
  return exponent_vs_tokens(sides, channels, depth, flops_attention_stage);
}

std::size_t flops_crossover_side(std::size_t channels, std::size_t depth, std::size_t max_side) {
  for (std::size_t s = 2; s <= max_side; ++s)
    if (flops_hco_stage(s, channels, depth).total() <
        flops_attention_stage(s, channels, depth).total())
      return s;
  return 0;
}

namespace {

template <typename Fn>
double median_seconds(Fn&& fn, int reps) {
  std::vector<double> times;
  fn();  // warmup, discarded
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace

std::vector<ThroughputRow> throughput_scan(const std::vector<std::size_t>& sides,
                                           const BenchEncoderConfig& cfg, int reps,
                                           std::uint64_t seed) {
  std::vector<ThroughputRow> rows;
  for (std::size_t side : sides) {
    ThroughputRow row;
    row.side = side;
    if (side % cfg.patch != 0) fail_shape("throughput_scan", "side not divisible by patch");
    const std::size_t g = side / cfg.patch;
    row.tokens = g * g;
    row.hco_flops = flops_hco_stage(g, cfg.channels, cfg.depth).total();
    row.attention_flops = flops_attention_stage(g, cfg.channels, cfg.depth).total();
    try {
      bench_detail::HcoBenchEncoder<float> hco(cfg, side, rng::derive_seed(seed, 1));
      bench_detail::AttentionBenchEncoder<float> att(cfg, side, rng::derive_seed(seed, 2));
      rng::Xoshiro256pp r(rng::derive_seed(seed, side));
      std::vector<float> img(3 * side * side);
      for (auto& v : img) v = static_cast<float>(r.uniform());
      Tensor<float> image(Shape{3, side, side}, std::move(img));
      volatile float guard = 0;
      const double t_hco = median_seconds(
          [&] {
            auto out = hco.forward(image);
            guard = guard + out[0];
          },
          reps);
      const double t_att = median_seconds(
          [&] {
            auto out = att.forward(image);
            guard = guard + out[0];
          },
          reps);
      row.hco_images_per_sec = 1.0 / t_hco;
      row.attention_images_per_sec = 1.0 / t_att;
    } catch (const std::bad_alloc&) {
      row.measurable = false;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace heatlens
