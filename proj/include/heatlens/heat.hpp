#pragma once

#include "heatlens/dct.hpp"

namespace heatlens {

// Spectral heat step: transform, decay every mode by exp(-k * lambda * t),
// transform back. lambda is the plan's grid-Laplacian symbol, so for scalar k
// this is the exact diagonalization of 5-point Neumann diffusion; the DC mode
// has lambda = 0 and the channel mean is conserved exactly.
//
// k may be a per-frequency field matching the signal layout ([C,m,n] or
// [m,n]) or a rank-0 scalar; differentiable in both the signal and k.
template <typename T>
Tensor<T> hco_apply(const SpectralPlan<T>& plan, const Tensor<T>& u0, const Tensor<T>& k, T t) {
  if (t < T(0)) fail_value("hco_apply", "diffusion time t must be >= 0");
  for (T v : k.values())
    if (!(v >= T(0))) fail_value("hco_apply", "diffusivity k must be >= 0 elementwise");
  if (k.rank() == 3 &&
      (u0.rank() != 3 || k.shape()[0] != u0.shape()[0] || k.shape()[1] != u0.shape()[1] ||
       k.shape()[2] != u0.shape()[2]))
    fail_shape("hco_apply", "k field " + shape_str(k.shape()) + " does not match signal " +
                                shape_str(u0.shape()));
  if (k.rank() == 2 && (k.shape()[0] != plan.rows() || k.shape()[1] != plan.cols()))
    fail_shape("hco_apply", "k field " + shape_str(k.shape()) + " does not match plan");

  Tensor<T> freq = dct2(plan, u0);
  Tensor<T> rate = mul(k, plan.lap_symbol());
  Tensor<T> filter = heatlens::exp(scale(rate, -t));
  return idct2(plan, mul(freq, filter));
}

template <typename T>
Tensor<T> hco_apply(const SpectralPlan<T>& plan, const Tensor<T>& u0, T k, T t) {
  return hco_apply(plan, u0, Tensor<T>::scalar(k), t);
}

// k = softplus(raw FVE weights); strictly positive for finite inputs.
template <typename T>
Tensor<T> derive_k(const Tensor<T>& fve_raw) {
  return softplus(fve_raw);
}

enum class Activation { gelu, identity };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  return act == Activation::gelu ? gelu(x) : x;
}

// Correction learner: inject the spatial correction field additively, then
// activate. Sharpens structure boundaries ahead of the spectral step.
template <typename T>
Tensor<T> correction_learn(const Tensor<T>& z, const Tensor<T>& sce,
                           Activation act = Activation::gelu) {
  if (z.shape() != sce.shape())
    fail_shape("correction_learn", "field " + shape_str(sce.shape()) +
                                       " does not match signal " + shape_str(z.shape()));
  return activate(add(z, sce), act);
}

// Learnable state of one encoder block on a fixed token grid.
// Projections and the pointwise MLP are stored as 1x1 conv kernels.
template <typename T>
struct HcoParams {
  Tensor<T> fve_raw;     // [C,gh,gw] pre-softplus diffusivity field
  Tensor<T> sce;         // [C,gh,gw] additive spatial correction field
  T t = T(1);            // diffusion time, fixed hyperparameter
  Tensor<T> proj_in_w;   // [C,C,1,1]
  Tensor<T> proj_in_b;   // [C]
  Tensor<T> proj_out_w;  // [C,C,1,1]
  Tensor<T> proj_out_b;  // [C]
  Tensor<T> mlp1_w;      // [4C,C,1,1]
  Tensor<T> mlp1_b;      // [4C]
  Tensor<T> mlp2_w;      // [C,4C,1,1]
  Tensor<T> mlp2_b;      // [C]
  Activation cl_act = Activation::gelu;
};

// One residual encoder block:
//   out = z + M(proj_out(HCO(proj_in(CL(z)))))
// where M(x) = x + mlp2(gelu(mlp1(x))) is the inner-residual pointwise MLP.
// Shape preserving; with identity projections, zero SCE/MLP and identity
// activation the block reduces to z + HCO(z).
template <typename T>
Tensor<T> hco_block(const SpectralPlan<T>& plan, const HcoParams<T>& p, const Tensor<T>& z) {
  if (z.rank() != 3 || z.shape() != p.fve_raw.shape())
    fail_shape("hco_block", "signal " + shape_str(z.shape()) + " does not match block fields " +
                                shape_str(p.fve_raw.shape()));
  Tensor<T> a = correction_learn(z, p.sce, p.cl_act);
  Tensor<T> b = conv2d(a, p.proj_in_w, std::optional<Tensor<T>>(p.proj_in_b), 1, 0);
  Tensor<T> c = hco_apply(plan, b, derive_k(p.fve_raw), p.t);
  Tensor<T> d = conv2d(c, p.proj_out_w, std::optional<Tensor<T>>(p.proj_out_b), 1, 0);
  Tensor<T> h = gelu(conv2d(d, p.mlp1_w, std::optional<Tensor<T>>(p.mlp1_b), 1, 0));
  Tensor<T> e = add(d, conv2d(h, p.mlp2_w, std::optional<Tensor<T>>(p.mlp2_b), 1, 0));
  return add(z, e);
}

}  // namespace heatlens
