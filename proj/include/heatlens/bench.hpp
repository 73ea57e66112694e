#pragma once

#include <chrono>
#include <cstdint>
#include <string_view>

#include "heatlens/model.hpp"

namespace heatlens {

// Analytic multiply-add counts; 1 multiply + 1 add = 2 flops throughout.
struct FlopsReport {
  std::size_t side = 0;    // token-grid side
  std::size_t tokens = 0;  // side^2
  std::vector<std::pair<std::string, std::uint64_t>> components;
  static constexpr const char* kConvention = "1 multiply + 1 add = 2 flops";

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [name, c] : components) t += c;
    return t;
  }

  std::uint64_t component(std::string_view name) const {
    for (const auto& [n, c] : components)
      if (n == name) return c;
    return 0;
  }
};

// flat spectral-block encoder over an s x s token grid (matmul DCT path)
FlopsReport flops_hco_stage(std::size_t side, std::size_t channels, std::size_t depth);
// global self-attention encoder over the same token grid
FlopsReport flops_attention_stage(std::size_t side, std::size_t channels, std::size_t depth);

// least-squares slope of log(y) against log(x)
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

double hco_flops_exponent(const std::vector<std::size_t>& sides, std::size_t channels,
                          std::size_t depth);
double attention_flops_exponent(const std::vector<std::size_t>& sides, std::size_t channels,
                                std::size_t depth);

// smallest token side at which the spectral encoder is cheaper than the
// attention encoder; 0 if none up to max_side
std::size_t flops_crossover_side(std::size_t channels, std::size_t depth, std::size_t max_side);

// ---------------------------------------------------------------------------
// finite-difference heat oracle
// ---------------------------------------------------------------------------

// Explicit Euler stepping of u_t = k (u_xx + u_yy) on a unit-spaced grid,
// 5-point Laplacian in conservative flux form, zero-flux (mirror Neumann)
// boundaries. Independent real-space route against hco_apply; first-order
// accurate in dt. Rejects dt above the stability bound dt <= 1/(4k).
template <typename T>
Tensor<T> heat_fd_oracle(const Tensor<T>& u0, T k, T t_total, T dt) {
  if (u0.rank() != 2)
    fail_shape("heat_fd_oracle", "expects [m,n], got " + shape_str(u0.shape()));
  if (k < T(0)) fail_value("heat_fd_oracle", "diffusivity must be >= 0");
  if (t_total < T(0) || dt <= T(0)) fail_value("heat_fd_oracle", "want t_total >= 0, dt > 0");
  if (k > T(0) && dt > T(1) / (T(4) * k))
    fail_value("heat_fd_oracle", "dt violates the explicit-Euler stability bound 1/(4k)");
  const std::size_t m = u0.shape()[0], n = u0.shape()[1];
  std::vector<T> u = u0.values();
  std::vector<T> next(u.size());
  const long steps = static_cast<long>(static_cast<double>(t_total) / static_cast<double>(dt) + 0.5);
  const T rem = t_total - static_cast<T>(steps) * dt;
  auto sweep = [&](T h) {
    const T kh = k * h;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = i * n + j;
        const T c = u[idx];
        // zero boundary flux: missing neighbors contribute nothing
        const T fr = j + 1 < n ? u[idx + 1] - c : T(0);
        const T fl = j > 0 ? c - u[idx - 1] : T(0);
        const T fd = i + 1 < m ? u[idx + n] - c : T(0);
        const T fu = i > 0 ? c - u[idx - n] : T(0);
        next[idx] = c + kh * (fr - fl + fd - fu);
      }
    u.swap(next);
  };
  for (long s = 0; s < steps; ++s) sweep(dt);
  if (std::abs(static_cast<double>(rem)) > 1e-12 * std::abs(static_cast<double>(t_total)))
    sweep(rem);
  return Tensor<T>(u0.shape(), std::move(u));
}

// ---------------------------------------------------------------------------
// throughput scan
// ---------------------------------------------------------------------------

struct BenchEncoderConfig {
  std::size_t channels = 8;
  std::size_t depth = 2;
  std::size_t patch = 4;  // image side -> side/patch tokens
};

struct ThroughputRow {
  std::size_t side = 0;    // image side
  std::size_t tokens = 0;  // (side/patch)^2
  double hco_images_per_sec = 0;
  double attention_images_per_sec = 0;
  std::uint64_t hco_flops = 0;
  std::uint64_t attention_flops = 0;
  bool measurable = true;
};

// forward-only throughput: warmup pass discarded, median of `reps` timed
// passes, single thread
std::vector<ThroughputRow> throughput_scan(const std::vector<std::size_t>& sides,
                                           const BenchEncoderConfig& cfg, int reps = 5,
                                           std::uint64_t seed = 1);

// Single forward pass of each baseline; exposed so tests can time/verify
// them directly. Input is a [3, side, side] image.
namespace bench_detail {

template <typename T>
struct HcoBenchEncoder {
  BenchEncoderConfig cfg;
  SpectralPlan<T> plan = SpectralPlan<T>::make(2, 2);
  Tensor<T> embed_w, embed_b;
  std::vector<HcoParams<T>> blocks;

  HcoBenchEncoder(const BenchEncoderConfig& c, std::size_t side, std::uint64_t seed) : cfg(c) {
    const std::size_t g = side / cfg.patch;
    plan = SpectralPlan<T>::make(g, g);
    rng::Xoshiro256pp r(seed);
    auto init = [&](Shape shape, std::size_t fan_in) {
      std::vector<T> v(numel(shape));
      const double lim = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& e : v) e = static_cast<T>(r.uniform(-lim, lim));
      return Tensor<T>(shape, std::move(v));
    };
    const std::size_t C = cfg.channels;
    embed_w = init({C, 3, cfg.patch, cfg.patch}, 3 * cfg.patch * cfg.patch);
    embed_b = Tensor<T>::zeros({C});
    for (std::size_t b = 0; b < cfg.depth; ++b) {
      HcoParams<T> p;
      p.fve_raw = init({C, g, g}, 1);
      p.sce = init({C, g, g}, 1);
      p.proj_in_w = init({C, C, 1, 1}, C);
      p.proj_in_b = Tensor<T>::zeros({C});
      p.proj_out_w = init({C, C, 1, 1}, C);
      p.proj_out_b = Tensor<T>::zeros({C});
      p.mlp1_w = init({4 * C, C, 1, 1}, C);
      p.mlp1_b = Tensor<T>::zeros({4 * C});
      p.mlp2_w = init({C, 4 * C, 1, 1}, 4 * C);
      p.mlp2_b = Tensor<T>::zeros({C});
      blocks.push_back(std::move(p));
    }
  }

  Tensor<T> forward(const Tensor<T>& image) const {
    Tensor<T> z = patchify(image, embed_w, std::optional<Tensor<T>>(embed_b), cfg.patch);
    for (const auto& b : blocks) z = hco_block(plan, b, z);
    return z;
  }
};

template <typename T>
struct AttentionBenchEncoder {
  BenchEncoderConfig cfg;
  std::size_t tokens = 0;
  Tensor<T> embed_w, embed_b;
  struct Block {
    Tensor<T> wq, wk, wv, wo;      // [C,C]
    Tensor<T> mlp1, mlp2;          // [4C,C], [C,4C]
  };
  std::vector<Block> blocks;

  AttentionBenchEncoder(const BenchEncoderConfig& c, std::size_t side, std::uint64_t seed)
      : cfg(c) {
    const std::size_t g = side / cfg.patch;
    tokens = g * g;
    rng::Xoshiro256pp r(seed);
    auto init = [&](Shape shape, std::size_t fan_in) {
      std::vector<T> v(numel(shape));
      const double lim = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& e : v) e = static_cast<T>(r.uniform(-lim, lim));
      return Tensor<T>(shape, std::move(v));
    };
    const std::size_t C = cfg.channels;
    embed_w = init({C, 3, cfg.patch, cfg.patch}, 3 * cfg.patch * cfg.patch);
    embed_b = Tensor<T>::zeros({C});
    for (std::size_t b = 0; b < cfg.depth; ++b)
      blocks.push_back(Block{init({C, C}, C), init({C, C}, C), init({C, C}, C), init({C, C}, C),
                             init({4 * C, C}, C), init({C, 4 * C}, 4 * C)});
  }

  // plain loops, forward only; [3,s,s] -> [N,C] token matrix
  Tensor<T> forward(const Tensor<T>& image) const {
    const std::size_t C = cfg.channels, N = tokens;
    Tensor<T> emb = patchify(image, embed_w, std::optional<Tensor<T>>(embed_b), cfg.patch);
    // [C,g,g] -> X[N,C]
    std::vector<T> X(N * C);
    const auto& ev = emb.values();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < N; ++t) X[t * C + c] = ev[c * N + t];

    std::vector<T> q(N * C), kxx(N * C), vv(N * C), att(N * N), ctx(N * C), h(N * 4 * C),
        mlp_out(N * C);
    for (const auto& blk : blocks) {
      auto matvecs = [&](const Tensor<T>& w, std::vector<T>& out) {
        std::fill(out.begin(), out.end(), T(0));
        detail::gemm_nt_acc(N, C, C, X.data(), w.values().data(), out.data());
      };
      matvecs(blk.wq, q);
      matvecs(blk.wk, kxx);
      matvecs(blk.wv, vv);
      const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(C));
      // scores + row softmax
      std::fill(att.begin(), att.end(), T(0));
      detail::gemm_nt_acc(N, C, N, q.data(), kxx.data(), att.data());
      for (std::size_t i = 0; i < N; ++i) {
        T* row = att.data() + i * N;
        T mx = row[0] * inv_sqrt;
        for (std::size_t j = 0; j < N; ++j) {
          row[j] *= inv_sqrt;
          mx = std::max(mx, row[j]);
        }
        T denom = 0;
        for (std::size_t j = 0; j < N; ++j) {
          row[j] = std::exp(row[j] - mx);
          denom += row[j];
        }
        const T inv = T(1) / denom;
        for (std::size_t j = 0; j < N; ++j) row[j] *= inv;
      }
      std::fill(ctx.begin(), ctx.end(), T(0));
      detail::gemm_nn_acc(N, N, C, att.data(), vv.data(), ctx.data());
      // out proj + residual
      std::vector<T> proj(N * C, T(0));
      detail::gemm_nt_acc(N, C, C, ctx.data(), blk.wo.values().data(), proj.data());
      for (std::size_t i = 0; i < N * C; ++i) X[i] += proj[i];
      // MLP + residual
      std::fill(h.begin(), h.end(), T(0));
      detail::gemm_nt_acc(N, C, 4 * C, X.data(), blk.mlp1.values().data(), h.data());
      for (auto& e : h) e = detail::gelu_scalar(e);
      std::fill(mlp_out.begin(), mlp_out.end(), T(0));
      detail::gemm_nt_acc(N, 4 * C, C, h.data(), blk.mlp2.values().data(), mlp_out.data());
      for (std::size_t i = 0; i < N * C; ++i) X[i] += mlp_out[i];
    }
    return Tensor<T>(Shape{N, C}, std::move(X));
  }
};

}  // namespace bench_detail

}  // namespace heatlens
