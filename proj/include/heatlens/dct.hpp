#pragma once

#include <complex>
#include <cstdint>
#include <memory>

#include "heatlens/ops.hpp"

namespace heatlens {

enum class DctPath { matmul, fft };

namespace detail {

inline bool is_pow2(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

inline std::size_t ilog2(std::size_t n) {
  std::size_t l = 0;
  while ((std::size_t{1} << l) < n) ++l;
  return l;
}

// instrumentation hook: one count per radix-2 butterfly
inline thread_local std::uint64_t g_fft_butterflies = 0;

// Orthonormal 1D DCT-II / DCT-III of power-of-two length via a same-length
// complex FFT with even/odd reordering and quarter-sample twiddles.
template <typename T>
struct FastDct1d {
  std::size_t n = 0;
  std::size_t stages = 0;
  std::vector<std::size_t> bitrev;
  std::vector<std::complex<T>> tw;      // per stage, concatenated, forward sign
  std::vector<std::complex<T>> post;    // exp(-i pi k / (2n))
  std::vector<T> ortho;                 // sqrt(1/n), then sqrt(2/n)

  explicit FastDct1d(std::size_t len) : n(len) {
    stages = ilog2(n);
    bitrev.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < stages; ++b) r |= ((i >> b) & 1) << (stages - 1 - b);
      bitrev[i] = r;
    }
    const T pi = T(3.14159265358979323846L);
    for (std::size_t len2 = 2; len2 <= n; len2 <<= 1)
      for (std::size_t j = 0; j < len2 / 2; ++j) {
        const T ang = T(-2) * pi * static_cast<T>(j) / static_cast<T>(len2);
        tw.emplace_back(std::cos(ang), std::sin(ang));
      }
    post.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const T ang = -pi * static_cast<T>(k) / (T(2) * static_cast<T>(n));
      post[k] = {std::cos(ang), std::sin(ang)};
    }
    ortho.resize(n, std::sqrt(T(2) / static_cast<T>(n)));
    ortho[0] = std::sqrt(T(1) / static_cast<T>(n));
  }

  void fft(std::complex<T>* buf, bool invert) const {
    for (std::size_t i = 0; i < n; ++i)
      if (i < bitrev[i]) std::swap(buf[i], buf[bitrev[i]]);
    std::size_t off = 0;
    for (std::size_t len2 = 2; len2 <= n; len2 <<= 1) {
      const std::size_t half = len2 / 2;
      for (std::size_t start = 0; start < n; start += len2)
        for (std::size_t j = 0; j < half; ++j) {
          const std::complex<T> w = invert ? std::conj(tw[off + j]) : tw[off + j];
          const std::complex<T> u = buf[start + j];
          const std::complex<T> v = buf[start + j + half] * w;
          buf[start + j] = u + v;
          buf[start + j + half] = u - v;
          ++g_fft_butterflies;
        }
      off += half;
    }
  }

  // orthonormal DCT-II
  void forward(const T* in, T* out, std::complex<T>* scratch) const {
    const std::size_t half = n / 2;
    for (std::size_t j = 0; j < half; ++j) {
      scratch[j] = {in[2 * j], T(0)};
      scratch[n - 1 - j] = {in[2 * j + 1], T(0)};
    }
    fft(scratch, false);
    for (std::size_t k = 0; k < n; ++k)
      out[k] = ortho[k] * (scratch[k].real() * post[k].real() -
                           scratch[k].imag() * post[k].imag());
  }

  // orthonormal DCT-III (inverse of forward)
  void inverse(const T* in, T* out, std::complex<T>* scratch) const {
    // rebuild the packed spectrum: V[k] = e^{+i pi k/2n} (c[k] - i c[n-k])
    // with c[k] = in[k]/ortho[k], c[n] = 0
    scratch[0] = {in[0] / ortho[0], T(0)};
    for (std::size_t k = 1; k < n; ++k) {
      const T ck = in[k] / ortho[k];
      const T cnk = in[n - k] / ortho[n - k];
      const std::complex<T> pre(post[k].real(), -post[k].imag());  // conj = e^{+i..}
      scratch[k] = pre * std::complex<T>(ck, -cnk);
    }
    fft(scratch, true);
    const T inv_n = T(1) / static_cast<T>(n);
    const std::size_t half = n / 2;
    for (std::size_t j = 0; j < half; ++j) {
      out[2 * j] = scratch[j].real() * inv_n;
      out[2 * j + 1] = scratch[n - 1 - j].real() * inv_n;
    }
  }
};

}  // namespace detail

inline void reset_fft_butterfly_count() { detail::g_fft_butterflies = 0; }
inline std::uint64_t fft_butterfly_count() { return detail::g_fft_butterflies; }

// Precomputed DCT machinery for a fixed (m, n) grid: orthonormal DCT-II basis
// matrices for the matmul path, FFT plans for the fast path (power-of-two
// extents; others silently take the matmul path), the angular frequency grids
// omega_u = pi*u/m, omega_v = pi*v/n, and the grid-Laplacian symbol
// 4 sin^2(omega_x/2) + 4 sin^2(omega_y/2) that the heat filter decays by.
template <typename T>
class SpectralPlan {
 public:
  static SpectralPlan make(std::size_t m, std::size_t n, DctPath path = DctPath::matmul) {
    if (m < 2 || n < 2)
      fail_shape("SpectralPlan", "degenerate extents " + std::to_string(m) + "x" +
                                     std::to_string(n));
    SpectralPlan p;
    p.m_ = m;
    p.n_ = n;
    p.path_ = path;
    p.basis_row_ = make_basis(m);
    p.basis_col_ = make_basis(n);
    p.omega_x_ = make_omega(m);
    p.omega_y_ = make_omega(n);
    {
      std::vector<T> sym(m * n);
      const auto& wx = p.omega_x_.values();
      const auto& wy = p.omega_y_.values();
      for (std::size_t u = 0; u < m; ++u) {
        const T sx = T(2) * std::sin(wx[u] / T(2));
        for (std::size_t v = 0; v < n; ++v) {
          const T sy = T(2) * std::sin(wy[v] / T(2));
          sym[u * n + v] = sx * sx + sy * sy;
        }
      }
      p.lap_symbol_ = Tensor<T>(Shape{m, n}, std::move(sym));
    }
    if (path == DctPath::fft && detail::is_pow2(m) && detail::is_pow2(n)) {
      p.row_fast_ = std::make_shared<detail::FastDct1d<T>>(m);
      p.col_fast_ = m == n ? p.row_fast_ : std::make_shared<detail::FastDct1d<T>>(n);
    }
    return p;
  }

  std::size_t rows() const { return m_; }
  std::size_t cols() const { return n_; }
  DctPath path() const { return path_; }
  bool fast_path_active() const { return row_fast_ != nullptr; }
  const Tensor<T>& basis_row() const { return basis_row_; }
  const Tensor<T>& basis_col() const { return basis_col_; }
  const Tensor<T>& omega_x() const { return omega_x_; }
  const Tensor<T>& omega_y() const { return omega_y_; }
  const Tensor<T>& lap_symbol() const { return lap_symbol_; }

  // separable 2D transform over channels channels of contiguous [m,n] planes
  void transform_raw(const T* in, T* out, std::size_t channels, bool inverse) const {
    const std::size_t mn = m_ * n_;
    if (row_fast_) {
      std::vector<std::complex<T>> scratch(std::max(m_, n_));
      std::vector<T> colbuf(m_), colout(m_);
      for (std::size_t c = 0; c < channels; ++c) {
        const T* src = in + c * mn;
        T* dst = out + c * mn;
        for (std::size_t r = 0; r < m_; ++r) {
          if (inverse)
            col_fast_->inverse(src + r * n_, dst + r * n_, scratch.data());
          else
            col_fast_->forward(src + r * n_, dst + r * n_, scratch.data());
        }
        for (std::size_t col = 0; col < n_; ++col) {
          for (std::size_t r = 0; r < m_; ++r) colbuf[r] = dst[r * n_ + col];
          if (inverse)
            row_fast_->inverse(colbuf.data(), colout.data(), scratch.data());
          else
            row_fast_->forward(colbuf.data(), colout.data(), scratch.data());
          for (std::size_t r = 0; r < m_; ++r) dst[r * n_ + col] = colout[r];
        }
      }
      return;
    }
    const T* Br = basis_row_.values().data();
    const T* Bc = basis_col_.values().data();
    std::vector<T> tmp(mn);
    for (std::size_t c = 0; c < channels; ++c) {
      const T* src = in + c * mn;
      T* dst = out + c * mn;
      std::fill(tmp.begin(), tmp.end(), T(0));
      std::fill(dst, dst + mn, T(0));
      if (!inverse) {
        detail::gemm_nn_acc(m_, m_, n_, Br, src, tmp.data());     // Brow * X
        detail::gemm_nt_acc(m_, n_, n_, tmp.data(), Bc, dst);     // .. * Bcol^T
      } else {
        detail::gemm_tn_acc(m_, m_, n_, Br, src, tmp.data());     // Brow^T * X
        detail::gemm_nn_acc(m_, n_, n_, tmp.data(), Bc, dst);     // .. * Bcol
      }
    }
  }

 private:
  static Tensor<T> make_basis(std::size_t n) {
    std::vector<T> b(n * n);
    const T pi = T(3.14159265358979323846L);
    for (std::size_t k = 0; k < n; ++k) {
      const T s = k == 0 ? std::sqrt(T(1) / static_cast<T>(n))
                         : std::sqrt(T(2) / static_cast<T>(n));
      for (std::size_t j = 0; j < n; ++j)
        b[k * n + j] =
            s * std::cos(pi * (T(2) * static_cast<T>(j) + T(1)) * static_cast<T>(k) /
                         (T(2) * static_cast<T>(n)));
    }
    return Tensor<T>(Shape{n, n}, std::move(b));
  }

  static Tensor<T> make_omega(std::size_t n) {
    std::vector<T> w(n);
    const T pi = T(3.14159265358979323846L);
    for (std::size_t u = 0; u < n; ++u) w[u] = pi * static_cast<T>(u) / static_cast<T>(n);
    return Tensor<T>(Shape{n}, std::move(w));
  }

  std::size_t m_ = 0, n_ = 0;
  DctPath path_ = DctPath::matmul;
  Tensor<T> basis_row_, basis_col_, omega_x_, omega_y_, lap_symbol_;
  std::shared_ptr<detail::FastDct1d<T>> row_fast_, col_fast_;
};

namespace detail {

template <typename T>
std::size_t dct_channels(const char* op, const SpectralPlan<T>& plan, const Tensor<T>& x) {
  if (x.rank() == 2) {
    if (x.shape()[0] != plan.rows() || x.shape()[1] != plan.cols())
      fail_shape(op, "extent " + shape_str(x.shape()) + " does not match plan " +
                         std::to_string(plan.rows()) + "x" + std::to_string(plan.cols()));
    return 1;
  }
  if (x.rank() == 3) {
    if (x.shape()[1] != plan.rows() || x.shape()[2] != plan.cols())
      fail_shape(op, "extent " + shape_str(x.shape()) + " does not match plan " +
                         std::to_string(plan.rows()) + "x" + std::to_string(plan.cols()));
    return x.shape()[0];
  }
  fail_shape(op, "expects [m,n] or [C,m,n], got " + shape_str(x.shape()));
}

}  // namespace detail

// Orthonormal 2D DCT-II per channel. Linear; the adjoint of an orthonormal
// transform is its inverse, so backward applies the inverse transform.
template <typename T>
Tensor<T> dct2(const SpectralPlan<T>& plan, const Tensor<T>& x) {
  const std::size_t c = detail::dct_channels("dct2", plan, x);
  std::vector<T> vals(x.size());
  plan.transform_raw(x.values().data(), vals.data(), c, false);
  return detail::wire_unary(x, x.shape(), std::move(vals),
                            [plan, c](const std::vector<T>& up, std::vector<T>& ga) {
                              std::vector<T> tmp(up.size());
                              plan.transform_raw(up.data(), tmp.data(), c, true);
                              for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
                            });
}

// Orthonormal 2D DCT-III (inverse of dct2)
template <typename T>
Tensor<T> idct2(const SpectralPlan<T>& plan, const Tensor<T>& x) {
  const std::size_t c = detail::dct_channels("idct2", plan, x);
  std::vector<T> vals(x.size());
  plan.transform_raw(x.values().data(), vals.data(), c, true);
  return detail::wire_unary(x, x.shape(), std::move(vals),
                            [plan, c](const std::vector<T>& up, std::vector<T>& ga) {
                              std::vector<T> tmp(up.size());
                              plan.transform_raw(up.data(), tmp.data(), c, false);
                              for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
                            });
}

// Exact multiply-add count of one 2D transform, 1 mul + 1 add = 2 flops.
// matmul path: two dense contractions per channel.
// fft path: 10 flops per radix-2 butterfly plus 4 per post-twiddle output,
// leading term 5*C*m*n*log2(m*n).
template <typename T>
std::uint64_t flops_dct2(const SpectralPlan<T>& plan, std::size_t channels) {
  const std::uint64_t m = plan.rows(), n = plan.cols(), c = channels;
  if (plan.fast_path_active()) {
    const std::uint64_t brow = (m / 2) * detail::ilog2(m);
    const std::uint64_t bcol = (n / 2) * detail::ilog2(n);
    const std::uint64_t butterflies = c * (m * bcol + n * brow);
    return 10 * butterflies + 4 * c * 2 * m * n;
  }
  return c * (m * n * m + m * n * n) * 2;
}

}  // namespace heatlens
