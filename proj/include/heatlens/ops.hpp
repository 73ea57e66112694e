#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "heatlens/tensor.hpp"

namespace heatlens {

namespace detail {

// Broadcast rule: equal shapes, a rank-0 scalar on either side, or one shape
// that is a trailing suffix of the other. Nothing else, to keep shape bugs
// loud.
template <typename T>
Shape broadcast_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const Shape& big = sa.size() >= sb.size() ? sa : sb;
  const Shape& small = sa.size() >= sb.size() ? sb : sa;
  const std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[off + i])
      fail_shape(op, "shapes " + shape_str(sa) + " and " + shape_str(sb) + " do not broadcast");
  return big;
}

template <typename T, typename F>
std::vector<T> ew_map2(std::size_t n, const Tensor<T>& a, const Tensor<T>& b, F f) {
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(n);
  if (av.size() == n && bv.size() == n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else if (av.size() == n) {
    const std::size_t m = bv.size();
    std::size_t i = 0;
    for (std::size_t blk = 0; blk < n / m; ++blk)
      for (std::size_t j = 0; j < m; ++j, ++i) out[i] = f(av[i], bv[j]);
  } else {
    const std::size_t m = av.size();
    std::size_t i = 0;
    for (std::size_t blk = 0; blk < n / m; ++blk)
      for (std::size_t j = 0; j < m; ++j, ++i) out[i] = f(av[j], bv[i]);
  }
  return out;
}

// Accumulate per-output-element grad contributions into an operand's sink,
// folding broadcast blocks back down when the operand is the smaller side.
// term(i) is d(out[i])/d(operand[idx(i)]) * upstream[i].
template <typename T, typename Term>
void accum_bcast(std::size_t out_n, std::vector<T>& sink, Term term) {
  const std::size_t m = sink.size();
  if (m == out_n) {
    for (std::size_t i = 0; i < out_n; ++i) sink[i] += term(i);
  } else {
    std::size_t i = 0;
    for (std::size_t blk = 0; blk < out_n / m; ++blk)
      for (std::size_t j = 0; j < m; ++j, ++i) sink[j] += term(i);
  }
}

template <typename T>
Tape<T>* common_tape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.on_tape() && b.on_tape() && a.tape() != b.tape())
    fail_value(op, "operands live on different tapes");
  return a.on_tape() ? a.tape() : b.tape();
}

template <typename T, typename GA, typename GB>
Tensor<T> wire_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Shape out_shape,
                      std::vector<T> out_vals, GA grad_a, GB grad_b) {
  Tape<T>* tape = common_tape(op, a, b);
  if (!tape) return Tensor<T>(std::move(out_shape), std::move(out_vals));
  std::vector<int> inputs;
  const bool ta = a.on_tape(), tb = b.on_tape();
  if (ta) inputs.push_back(a.node());
  if (tb) inputs.push_back(b.node());
  auto fn = [ta, tb, grad_a, grad_b](const std::vector<T>& up,
                                     const typename Tape<T>::GradSinks& sinks) {
    std::size_t s = 0;
    if (ta) grad_a(up, *sinks[s++]);
    if (tb) grad_b(up, *sinks[s++]);
  };
  return tape->record(std::move(out_shape), std::move(out_vals), std::move(inputs),
                      std::move(fn));
}

template <typename T, typename G>
Tensor<T> wire_unary(const Tensor<T>& a, Shape out_shape, std::vector<T> out_vals, G grad_a) {
  if (!a.on_tape()) return Tensor<T>(std::move(out_shape), std::move(out_vals));
  auto fn = [grad_a](const std::vector<T>& up, const typename Tape<T>::GradSinks& sinks) {
    grad_a(up, *sinks[0]);
  };
  return a.tape()->record(std::move(out_shape), std::move(out_vals), {a.node()}, std::move(fn));
}

// indexer into a possibly-broadcast operand
inline std::size_t bidx(std::size_t i, std::size_t operand_n, std::size_t out_n) {
  return operand_n == out_n ? i : i % operand_n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Shape os = detail::broadcast_shape("add", a, b);
  const std::size_t n = numel(os);
  auto vals = detail::ew_map2(n, a, b, [](T x, T y) { return x + y; });
  return detail::wire_binary(
      "add", a, b, std::move(os), std::move(vals),
      [n](const std::vector<T>& up, std::vector<T>& ga) {
        detail::accum_bcast(n, ga, [&](std::size_t i) { return up[i]; });
      },
      [n](const std::vector<T>& up, std::vector<T>& gb) {
        detail::accum_bcast(n, gb, [&](std::size_t i) { return up[i]; });
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Shape os = detail::broadcast_shape("sub", a, b);
  const std::size_t n = numel(os);
  auto vals = detail::ew_map2(n, a, b, [](T x, T y) { return x - y; });
  return detail::wire_binary(
      "sub", a, b, std::move(os), std::move(vals),
      [n](const std::vector<T>& up, std::vector<T>& ga) {
        detail::accum_bcast(n, ga, [&](std::size_t i) { return up[i]; });
      },
      [n](const std::vector<T>& up, std::vector<T>& gb) {
        detail::accum_bcast(n, gb, [&](std::size_t i) { return -up[i]; });
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Shape os = detail::broadcast_shape("mul", a, b);
  const std::size_t n = numel(os);
  auto vals = detail::ew_map2(n, a, b, [](T x, T y) { return x * y; });
  const std::size_t an = a.size(), bn = b.size();
  auto ad = a.data(), bd = b.data();
  return detail::wire_binary(
      "mul", a, b, std::move(os), std::move(vals),
      [n, bn, bd](const std::vector<T>& up, std::vector<T>& ga) {
        detail::accum_bcast(n, ga,
                            [&](std::size_t i) { return up[i] * (*bd)[detail::bidx(i, bn, n)]; });
      },
      [n, an, ad](const std::vector<T>& up, std::vector<T>& gb) {
        detail::accum_bcast(n, gb,
                            [&](std::size_t i) { return up[i] * (*ad)[detail::bidx(i, an, n)]; });
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  Shape os = detail::broadcast_shape("div", a, b);
  const std::size_t n = numel(os);
  auto vals = detail::ew_map2(n, a, b, [](T x, T y) { return x / y; });
  check_finite("div", vals);
  const std::size_t an = a.size(), bn = b.size();
  auto ad = a.data(), bd = b.data();
  return detail::wire_binary(
      "div", a, b, std::move(os), std::move(vals),
      [n, bn, bd](const std::vector<T>& up, std::vector<T>& ga) {
        detail::accum_bcast(n, ga,
                            [&](std::size_t i) { return up[i] / (*bd)[detail::bidx(i, bn, n)]; });
      },
      [n, an, bn, ad, bd](const std::vector<T>& up, std::vector<T>& gb) {
        detail::accum_bcast(n, gb, [&](std::size_t i) {
          const T bv = (*bd)[detail::bidx(i, bn, n)];
          return -up[i] * (*ad)[detail::bidx(i, an, n)] / (bv * bv);
        });
      });
}

// ---------------------------------------------------------------------------
// elementwise unary / scalar
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> vals(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = c * av[i];
  return detail::wire_unary(a, a.shape(), std::move(vals),
                            [c](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i) ga[i] += c * up[i];
                            });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> vals(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::exp(av[i]);
  check_finite("exp", vals);
  auto out_copy = std::make_shared<const std::vector<T>>(vals);
  return detail::wire_unary(a, a.shape(), std::move(vals),
                            [out_copy](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i)
                                ga[i] += up[i] * (*out_copy)[i];
                            });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> vals(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = av[i] > T(0) ? av[i] : T(0);
  auto ad = a.data();
  // subgradient at 0 taken as 0
  return detail::wire_unary(a, a.shape(), std::move(vals),
                            [ad](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i)
                                if ((*ad)[i] > T(0)) ga[i] += up[i];
                            });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> vals(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::abs(av[i]);
  auto ad = a.data();
  // subgradient at 0 taken as 0
  return detail::wire_unary(a, a.shape(), std::move(vals),
                            [ad](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i) {
                                const T x = (*ad)[i];
                                if (x > T(0))
                                  ga[i] += up[i];
                                else if (x < T(0))
                                  ga[i] -= up[i];
                              }
                            });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  std::vector<T> vals(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::sqrt(av[i]);
  check_finite("sqrt", vals);
  auto out_copy = std::make_shared<const std::vector<T>>(vals);
  return detail::wire_unary(a, a.shape(), std::move(vals),
                            [out_copy](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i)
                                ga[i] += up[i] / (T(2) * (*out_copy)[i]);
                            });
}

// softplus(x) = ln(1 + e^x), evaluated in overflow-safe form
template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  std::vector<T> vals(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const T x = av[i];
    vals[i] = x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  auto ad = a.data();
  return detail::wire_unary(a, a.shape(), std::move(vals),
                            [ad](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i) {
                                const T x = (*ad)[i];
                                const T sig = T(1) / (T(1) + std::exp(-x));
                                ga[i] += up[i] * sig;
                              }
                            });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> vals(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::tanh(av[i]);
  auto out_copy = std::make_shared<const std::vector<T>>(vals);
  return detail::wire_unary(a, a.shape(), std::move(vals),
                            [out_copy](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i) {
                                const T y = (*out_copy)[i];
                                ga[i] += up[i] * (T(1) - y * y);
                              }
                            });
}

namespace detail {
template <typename T>
inline T gelu_scalar(T x) {
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T u = c * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
  const T c = T(0.7978845608028654);
  const T u = c * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(u);
  const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}
}  // namespace detail

// tanh-form GELU approximation
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> vals(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = detail::gelu_scalar(av[i]);
  auto ad = a.data();
  return detail::wire_unary(a, a.shape(), std::move(vals),
                            [ad](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i)
                                ga[i] += up[i] * detail::gelu_grad_scalar((*ad)[i]);
                            });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.values()) acc += v;
  return detail::wire_unary(a, Shape{}, std::vector<T>{acc},
                            [](const std::vector<T>& up, std::vector<T>& ga) {
                              for (auto& g : ga) g += up[0];
                            });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) fail_shape("mean", "empty tensor");
  const T inv = T(1) / static_cast<T>(a.size());
  T acc = 0;
  for (T v : a.values()) acc += v;
  acc *= inv;
  return detail::wire_unary(a, Shape{}, std::vector<T>{acc},
                            [inv](const std::vector<T>& up, std::vector<T>& ga) {
                              for (auto& g : ga) g += up[0] * inv;
                            });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn_acc(std::size_t m, std::size_t k, std::size_t n, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const T a = A[i * k + l];
      const T* Brow = B + l * n;
      T* Crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) Crow[j] += a * Brow[j];
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const T* Arow = A + i * n;
      const T* Brow = B + l * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += Arow[j] * Brow[j];
      C[i * k + l] += acc;
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* Arow = A + i * k;
    const T* Brow = B + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const T a = Arow[l];
      T* Crow = C + l * n;
      for (std::size_t j = 0; j < n; ++j) Crow[j] += a * Brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    fail_shape("matmul", "expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    fail_shape("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  std::vector<T> vals(m * n, T(0));
  detail::gemm_nn_acc(m, k, n, a.values().data(), b.values().data(), vals.data());
  auto ad = a.data(), bd = b.data();
  return detail::wire_binary(
      "matmul", a, b, Shape{m, n}, std::move(vals),
      [m, k, n, bd](const std::vector<T>& up, std::vector<T>& ga) {
        detail::gemm_nt_acc(m, n, k, up.data(), bd->data(), ga.data());
      },
      [m, k, n, ad](const std::vector<T>& up, std::vector<T>& gb) {
        detail::gemm_tn_acc(m, k, n, ad->data(), up.data(), gb.data());
      });
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  std::size_t cin, h, w, cout, kh, kw, stride, pad, oh, ow;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride,
                   std::size_t pad) {
  if (x.rank() != 3) fail_shape("conv2d", "input must be [C,H,W], got " + shape_str(x.shape()));
  if (kernel.rank() != 4)
    fail_shape("conv2d", "kernel must be [Cout,Cin,kh,kw], got " + shape_str(kernel.shape()));
  ConvDims d;
  d.cin = x.shape()[0];
  d.h = x.shape()[1];
  d.w = x.shape()[2];
  d.cout = kernel.shape()[0];
  d.kh = kernel.shape()[2];
  d.kw = kernel.shape()[3];
  d.stride = stride;
  d.pad = pad;
  if (kernel.shape()[1] != d.cin)
    fail_shape("conv2d", "kernel expects " + std::to_string(kernel.shape()[1]) +
                             " input channels, input has " + std::to_string(d.cin));
  if (d.kh % 2 == 0 || d.kw % 2 == 0) fail_shape("conv2d", "kernel extents must be odd");
  if (stride == 0) fail_shape("conv2d", "stride must be >= 1");
  if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad)
    fail_shape("conv2d", "kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                             " larger than padded input " + std::to_string(d.h + 2 * pad) + "x" +
                             std::to_string(d.w + 2 * pad));
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

// valid output-column range for a kernel tap so that the input column stays
// in [0, w)
inline void ow_bounds(std::size_t ow, std::size_t w, std::size_t stride, std::ptrdiff_t off,
                      std::size_t& lo, std::size_t& hi) {
  // need 0 <= o*stride + off < w
  std::ptrdiff_t lo_i = off < 0 ? (-off + static_cast<std::ptrdiff_t>(stride) - 1) /
                                      static_cast<std::ptrdiff_t>(stride)
                                : 0;
  std::ptrdiff_t hi_i = (static_cast<std::ptrdiff_t>(w) - 1 - off) /
                        static_cast<std::ptrdiff_t>(stride);
  lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, lo_i));
  hi = static_cast<std::size_t>(
      std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow) - 1, hi_i));
  if (hi_i < lo_i) hi = 0, lo = 1;  // empty range
}

}  // namespace detail

namespace detail {

// gather x into the [cin*kh*kw, oh*ow] patch matrix (zeros where the kernel
// hangs over the padding)
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
  const std::size_t ohow = d.oh * d.ow;
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(d.pad);
  std::size_t rowi = 0;
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const T* xplane = x + ci * d.h * d.w;
    for (std::size_t fh = 0; fh < d.kh; ++fh)
      for (std::size_t fw = 0; fw < d.kw; ++fw, ++rowi) {
        T* crow = col + rowi * ohow;
        const std::ptrdiff_t roff = static_cast<std::ptrdiff_t>(fh) - p;
        const std::ptrdiff_t coff = static_cast<std::ptrdiff_t>(fw) - p;
        std::size_t olo, ohi, rlo, rhi;
        ow_bounds(d.ow, d.w, d.stride, coff, olo, ohi);
        ow_bounds(d.oh, d.h, d.stride, roff, rlo, rhi);
        std::fill(crow, crow + ohow, T(0));
        if (olo > ohi || rlo > rhi) continue;
        for (std::size_t r = rlo; r <= rhi; ++r) {
          const std::size_t ih =
              static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r * d.stride) + roff);
          const T* xrow = xplane + ih * d.w;
          T* cdst = crow + r * d.ow + olo;
          const std::size_t len = ohi - olo + 1;
          if (d.stride == 1) {
            const T* xp = xrow + static_cast<std::size_t>(
                                     static_cast<std::ptrdiff_t>(olo) + coff);
            for (std::size_t j = 0; j < len; ++j) cdst[j] = xp[j];
          } else {
            for (std::size_t j = 0; j < len; ++j)
              cdst[j] = xrow[static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>((olo + j) * d.stride) + coff)];
          }
        }
      }
  }
}

// scatter-add the patch-matrix gradient back onto the input gradient
template <typename T>
void col2im_acc(const T* col, const ConvDims& d, T* gx) {
  const std::size_t ohow = d.oh * d.ow;
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(d.pad);
  std::size_t rowi = 0;
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    T* gplane = gx + ci * d.h * d.w;
    for (std::size_t fh = 0; fh < d.kh; ++fh)
      for (std::size_t fw = 0; fw < d.kw; ++fw, ++rowi) {
        const T* crow = col + rowi * ohow;
        const std::ptrdiff_t roff = static_cast<std::ptrdiff_t>(fh) - p;
        const std::ptrdiff_t coff = static_cast<std::ptrdiff_t>(fw) - p;
        std::size_t olo, ohi, rlo, rhi;
        ow_bounds(d.ow, d.w, d.stride, coff, olo, ohi);
        ow_bounds(d.oh, d.h, d.stride, roff, rlo, rhi);
        if (olo > ohi || rlo > rhi) continue;
        for (std::size_t r = rlo; r <= rhi; ++r) {
          const std::size_t ih =
              static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r * d.stride) + roff);
          T* grow = gplane + ih * d.w;
          const T* csrc = crow + r * d.ow + olo;
          const std::size_t len = ohi - olo + 1;
          if (d.stride == 1) {
            T* gp = grow + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(olo) + coff);
            for (std::size_t j = 0; j < len; ++j) gp[j] += csrc[j];
          } else {
            for (std::size_t j = 0; j < len; ++j)
              grow[static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>((olo + j) * d.stride) + coff)] += csrc[j];
          }
        }
      }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const std::optional<Tensor<T>>& bias, std::size_t stride, std::size_t padding) {
  const auto d = detail::conv_dims(x, kernel, stride, padding);
  if (bias && (bias->rank() != 1 || bias->shape()[0] != d.cout))
    fail_shape("conv2d", "bias must be [Cout]");

  // im2col + gemm on both passes; the patch matrix is regathered in backward
  // instead of saved (memory stays proportional to one op, not the tape)
  const std::size_t krows = d.cin * d.kh * d.kw;
  const std::size_t ohow = d.oh * d.ow;
  std::vector<T> col(krows * ohow);
  detail::im2col(x.values().data(), d, col.data());
  std::vector<T> vals(d.cout * ohow, T(0));
  detail::gemm_nn_acc(d.cout, krows, ohow, kernel.values().data(), col.data(), vals.data());
  if (bias) {
    const auto& bv = bias->values();
    for (std::size_t co = 0; co < d.cout; ++co) {
      T* oplane = vals.data() + co * ohow;
      for (std::size_t i = 0; i < ohow; ++i) oplane[i] += bv[co];
    }
  }

  auto xd = x.data(), kd = kernel.data();
  Tape<T>* tape = detail::common_tape("conv2d", x, kernel);
  const bool tb = bias && bias->on_tape();
  if (bias && bias->on_tape()) {
    if (tape && bias->tape() != tape) fail_value("conv2d", "operands live on different tapes");
    tape = bias->tape();
  }
  if (!tape) return Tensor<T>(Shape{d.cout, d.oh, d.ow}, std::move(vals));

  const bool tx = x.on_tape(), tk = kernel.on_tape();
  std::vector<int> inputs;
  if (tx) inputs.push_back(x.node());
  if (tk) inputs.push_back(kernel.node());
  if (tb) inputs.push_back(bias->node());

  auto fn = [d, krows, ohow, xd, kd, tx, tk, tb](const std::vector<T>& up,
                                                 const typename Tape<T>::GradSinks& sinks) {
    std::size_t s = 0;
    std::vector<T>* gx = tx ? sinks[s++] : nullptr;
    std::vector<T>* gk = tk ? sinks[s++] : nullptr;
    std::vector<T>* gb = tb ? sinks[s++] : nullptr;
    if (gb) {
      for (std::size_t co = 0; co < d.cout; ++co) {
        T acc = 0;
        const T* uplane = up.data() + co * ohow;
        for (std::size_t i = 0; i < ohow; ++i) acc += uplane[i];
        (*gb)[co] += acc;
      }
    }
    if (!gx && !gk) return;
    std::vector<T> col(krows * ohow);
    if (gk) {
      detail::im2col(xd->data(), d, col.data());
      detail::gemm_nt_acc(d.cout, ohow, krows, up.data(), col.data(), gk->data());
    }
    if (gx) {
      std::fill(col.begin(), col.end(), T(0));
      detail::gemm_tn_acc(d.cout, krows, ohow, kd->data(), up.data(), col.data());
      detail::col2im_acc(col.data(), d, gx->data());
    }
  };
  return tape->record(Shape{d.cout, d.oh, d.ow}, std::move(vals), std::move(inputs),
                      std::move(fn));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride,
                 std::size_t padding) {
  return conv2d(x, kernel, std::optional<Tensor<T>>{}, stride, padding);
}

// ---------------------------------------------------------------------------
// patchify: non-overlapping block linear projection
// ---------------------------------------------------------------------------

// Strided conv with kernel extent == stride == p and no padding; the
// patch-embedding / inter-stage downsampling primitive. p = 1 degenerates to
// a pointwise projection.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, const Tensor<T>& kernel,
                   const std::optional<Tensor<T>>& bias, std::size_t p) {
  if (x.rank() != 3) fail_shape("patchify", "input must be [C,H,W], got " + shape_str(x.shape()));
  if (kernel.rank() != 4 || kernel.shape()[2] != p || kernel.shape()[3] != p)
    fail_shape("patchify", "kernel must be [Cout,Cin," + std::to_string(p) + "," +
                               std::to_string(p) + "], got " + shape_str(kernel.shape()));
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t cout = kernel.shape()[0];
  if (kernel.shape()[1] != cin) fail_shape("patchify", "kernel input channels mismatch");
  if (p == 0 || h % p != 0 || w % p != 0)
    fail_shape("patchify", "extents " + std::to_string(h) + "x" + std::to_string(w) +
                               " not divisible by patch " + std::to_string(p));
  if (bias && (bias->rank() != 1 || bias->shape()[0] != cout))
    fail_shape("patchify", "bias must be [Cout]");
  const std::size_t oh = h / p, ow = w / p;

  const auto& xv = x.values();
  const auto& kv = kernel.values();
  std::vector<T> vals(cout * oh * ow, T(0));
  if (bias) {
    const auto& bv = bias->values();
    for (std::size_t co = 0; co < cout; ++co)
      std::fill(vals.begin() + co * oh * ow, vals.begin() + (co + 1) * oh * ow, bv[co]);
  }
  for (std::size_t co = 0; co < cout; ++co) {
    T* oplane = vals.data() + co * oh * ow;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xplane = xv.data() + ci * h * w;
      const T* kplane = kv.data() + (co * cin + ci) * p * p;
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx) {
          const T kval = kplane[dy * p + dx];
          for (std::size_t r = 0; r < oh; ++r) {
            const T* xrow = xplane + (r * p + dy) * w + dx;
            T* orow = oplane + r * ow;
            for (std::size_t o = 0; o < ow; ++o) orow[o] += kval * xrow[o * p];
          }
        }
    }
  }

  auto xd = x.data(), kd = kernel.data();
  Tape<T>* tape = detail::common_tape("patchify", x, kernel);
  const bool tb = bias && bias->on_tape();
  if (bias && bias->on_tape()) {
    if (tape && bias->tape() != tape) fail_value("patchify", "operands live on different tapes");
    tape = bias->tape();
  }
  if (!tape) return Tensor<T>(Shape{cout, oh, ow}, std::move(vals));

  const bool tx = x.on_tape(), tk = kernel.on_tape();
  std::vector<int> inputs;
  if (tx) inputs.push_back(x.node());
  if (tk) inputs.push_back(kernel.node());
  if (tb) inputs.push_back(bias->node());

  auto fn = [cin, cout, h, w, oh, ow, p, xd, kd, tx, tk,
             tb](const std::vector<T>& up, const typename Tape<T>::GradSinks& sinks) {
    std::size_t s = 0;
    std::vector<T>* gx = tx ? sinks[s++] : nullptr;
    std::vector<T>* gk = tk ? sinks[s++] : nullptr;
    std::vector<T>* gb = tb ? sinks[s++] : nullptr;
    if (gb) {
      for (std::size_t co = 0; co < cout; ++co) {
        T acc = 0;
        const T* uplane = up.data() + co * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) acc += uplane[i];
        (*gb)[co] += acc;
      }
    }
    if (!gx && !gk) return;
    for (std::size_t co = 0; co < cout; ++co) {
      const T* uplane = up.data() + co * oh * ow;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xplane = xd->data() + ci * h * w;
        const T* kplane = kd->data() + (co * cin + ci) * p * p;
        T* gxplane = gx ? gx->data() + ci * h * w : nullptr;
        T* gkplane = gk ? gk->data() + (co * cin + ci) * p * p : nullptr;
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) {
            const T kval = kplane[dy * p + dx];
            T kacc = 0;
            for (std::size_t r = 0; r < oh; ++r) {
              const T* urow = uplane + r * ow;
              const T* xrow = xplane + (r * p + dy) * w + dx;
              T* gxrow = gxplane ? gxplane + (r * p + dy) * w + dx : nullptr;
              for (std::size_t o = 0; o < ow; ++o) {
                if (gxrow) gxrow[o * p] += kval * urow[o];
                kacc += urow[o] * xrow[o * p];
              }
            }
            if (gkplane) gkplane[dy * p + dx] += kacc;
          }
      }
    }
  };
  return tape->record(Shape{cout, oh, ow}, std::move(vals), std::move(inputs), std::move(fn));
}

// ---------------------------------------------------------------------------
// pixel shuffle (sub-pixel rearrangement)
// ---------------------------------------------------------------------------

namespace detail {
// flat source index feeding out[c, h*r+dy, w*r+dx] = x[(c*r + dy)*r + dx, h, w]
// (channel-major blocks raster within each r x r output cell)
inline std::vector<std::size_t> shuffle_perm(std::size_t c_out, std::size_t h, std::size_t w,
                                             std::size_t r) {
  std::vector<std::size_t> perm(c_out * h * r * w * r);
  const std::size_t hw = h * w;
  std::size_t o = 0;
  for (std::size_t c = 0; c < c_out; ++c)
    for (std::size_t oh = 0; oh < h * r; ++oh) {
      const std::size_t ih = oh / r, dy = oh % r;
      for (std::size_t ow = 0; ow < w * r; ++ow, ++o) {
        const std::size_t iw = ow / r, dx = ow % r;
        perm[o] = ((c * r + dy) * r + dx) * hw + ih * w + iw;
      }
    }
  return perm;
}
}  // namespace detail

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  if (x.rank() != 3)
    fail_shape("pixel_shuffle", "input must be [C*r^2,H,W], got " + shape_str(x.shape()));
  if (r == 0) fail_shape("pixel_shuffle", "upscale factor must be >= 1");
  const std::size_t c_in = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (c_in % (r * r) != 0)
    fail_shape("pixel_shuffle", "channel count " + std::to_string(c_in) +
                                    " not divisible by r^2 = " + std::to_string(r * r));
  const std::size_t c_out = c_in / (r * r);
  auto perm = detail::shuffle_perm(c_out, h, w, r);
  const auto& xv = x.values();
  std::vector<T> vals(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) vals[i] = xv[perm[i]];
  auto pshared = std::make_shared<const std::vector<std::size_t>>(std::move(perm));
  return detail::wire_unary(x, Shape{c_out, h * r, w * r}, std::move(vals),
                            [pshared](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < up.size(); ++i)
                                ga[(*pshared)[i]] += up[i];
                            });
}

// exact inverse scatter of pixel_shuffle
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
  if (x.rank() != 3)
    fail_shape("pixel_unshuffle", "input must be [C,H*r,W*r], got " + shape_str(x.shape()));
  if (r == 0) fail_shape("pixel_unshuffle", "factor must be >= 1");
  const std::size_t c = x.shape()[0], hr = x.shape()[1], wr = x.shape()[2];
  if (hr % r != 0 || wr % r != 0)
    fail_shape("pixel_unshuffle", "spatial extents not divisible by r");
  auto perm = detail::shuffle_perm(c, hr / r, wr / r, r);
  const auto& xv = x.values();
  std::vector<T> vals(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) vals[perm[i]] = xv[i];
  auto pshared = std::make_shared<const std::vector<std::size_t>>(std::move(perm));
  return detail::wire_unary(x, Shape{c * r * r, hr / r, wr / r}, std::move(vals),
                            [pshared](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t i = 0; i < ga.size(); ++i)
                                ga[i] += up[(*pshared)[i]];
                            });
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[1] != b.shape()[1] ||
      a.shape()[2] != b.shape()[2])
    fail_shape("concat_channels", "spatial extents differ: " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  const std::size_t an = a.size(), bn = b.size();
  std::vector<T> vals;
  vals.reserve(an + bn);
  vals.insert(vals.end(), a.values().begin(), a.values().end());
  vals.insert(vals.end(), b.values().begin(), b.values().end());
  return detail::wire_binary(
      "concat_channels", a, b,
      Shape{a.shape()[0] + b.shape()[0], a.shape()[1], a.shape()[2]}, std::move(vals),
      [an](const std::vector<T>& up, std::vector<T>& ga) {
        for (std::size_t i = 0; i < an; ++i) ga[i] += up[i];
      },
      [an, bn](const std::vector<T>& up, std::vector<T>& gb) {
        for (std::size_t i = 0; i < bn; ++i) gb[i] += up[an + i];
      });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t f) {
  if (x.rank() != 3)
    fail_shape("upsample_nearest", "input must be [C,H,W], got " + shape_str(x.shape()));
  if (f == 0) fail_shape("upsample_nearest", "factor must be >= 1");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const auto& xv = x.values();
  std::vector<T> vals(c * h * f * w * f);
  std::size_t o = 0;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t oh = 0; oh < h * f; ++oh) {
      const T* xrow = xv.data() + (ci * h + oh / f) * w;
      for (std::size_t ow = 0; ow < w * f; ++ow, ++o) vals[o] = xrow[ow / f];
    }
  return detail::wire_unary(x, Shape{c, h * f, w * f}, std::move(vals),
                            [c, h, w, f](const std::vector<T>& up, std::vector<T>& ga) {
                              std::size_t o = 0;
                              for (std::size_t ci = 0; ci < c; ++ci)
                                for (std::size_t oh = 0; oh < h * f; ++oh) {
                                  T* garow = ga.data() + (ci * h + oh / f) * w;
                                  for (std::size_t ow = 0; ow < w * f; ++ow, ++o)
                                    garow[ow / f] += up[o];
                                }
                            });
}

// global average over the spatial extent: [C,H,W] -> [C]
template <typename T>
Tensor<T> spatial_mean_pool(const Tensor<T>& x) {
  if (x.rank() != 3)
    fail_shape("spatial_mean_pool", "input must be [C,H,W], got " + shape_str(x.shape()));
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  const auto& xv = x.values();
  std::vector<T> vals(c, T(0));
  for (std::size_t ci = 0; ci < c; ++ci) {
    T acc = 0;
    const T* plane = xv.data() + ci * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
    vals[ci] = acc / static_cast<T>(hw);
  }
  return detail::wire_unary(x, Shape{c}, std::move(vals),
                            [c, hw](const std::vector<T>& up, std::vector<T>& ga) {
                              for (std::size_t ci = 0; ci < c; ++ci) {
                                const T g = up[ci] / static_cast<T>(hw);
                                T* plane = ga.data() + ci * hw;
                                for (std::size_t i = 0; i < hw; ++i) plane[i] += g;
                              }
                            });
}

// Bilinear resize of a [C,H,W] field (align-corners sampling). Plain utility
// for carrying FVE/SCE fields across grid sizes; not recorded on the tape.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t h2, std::size_t w2) {
  if (x.rank() != 3)
    fail_shape("resize_bilinear", "input must be [C,H,W], got " + shape_str(x.shape()));
  if (h2 == 0 || w2 == 0) fail_shape("resize_bilinear", "degenerate target extents");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const auto& xv = x.values();
  std::vector<T> vals(c * h2 * w2);
  const double sy = h2 > 1 ? static_cast<double>(h - 1) / (h2 - 1) : 0.0;
  const double sx = w2 > 1 ? static_cast<double>(w - 1) / (w2 - 1) : 0.0;
  std::size_t o = 0;
  for (std::size_t ci = 0; ci < c; ++ci) {
    const T* plane = xv.data() + ci * h * w;
    for (std::size_t oy = 0; oy < h2; ++oy) {
      const double fy = oy * sy;
      const std::size_t y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double ty = fy - y0;
      for (std::size_t ox = 0; ox < w2; ++ox, ++o) {
        const double fx = ox * sx;
        const std::size_t x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double tx = fx - x0;
        const double v = (1 - ty) * ((1 - tx) * plane[y0 * w + x0] + tx * plane[y0 * w + x1]) +
                         ty * ((1 - tx) * plane[y1 * w + x0] + tx * plane[y1 * w + x1]);
        vals[o] = static_cast<T>(v);
      }
    }
  }
  return Tensor<T>(Shape{c, h2, w2}, std::move(vals));
}

}  // namespace heatlens
