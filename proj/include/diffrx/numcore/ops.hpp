#pragma once

#include "diffrx/numcore/autograd.hpp"

namespace diffrx::numcore {

// Element-wise arithmetic. `b` may match `a` exactly, hold a single value,
// match a leading prefix of a's axes (broadcast over the trailing ones), or be
// a rank-1 per-channel vector of length a.dim(1).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Scalar s);

Var sum(const Var& a);
Var mean(const Var& a);

Var relu(const Var& x);
Var silu(const Var& x);

// Normalizes each (sample, group) slice to zero mean / unit variance, then
// applies per-channel gamma/beta. x: [B,C,...]; gamma, beta: [C].
inline constexpr Scalar kGroupNormEps = 1e-5;
Var groupnorm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups,
              Scalar eps = kGroupNormEps);

// x: [B,in], w: [out,in], b: [out] -> [B,out]
Var linear(const Var& x, const Var& w, const Var& b);

// Same-padded cross-correlation. x: [B,Cin,H,W], w: [Cout,Cin,k,k] with k odd,
// bias: [Cout] -> [B,Cout,H,W].
Var conv2d(const Var& x, const Var& w, const Var& bias);

// 2x average pooling on every spatial axis whose extent exceeds 1.
Var avg_pool2(const Var& x);

// Nearest-neighbour upsampling of [B,C,H,W] to [B,C,out_h,out_w]; each
// factor must be 1 or 2.
Var upsample_nearest(const Var& x, std::size_t out_h, std::size_t out_w);

// [B,C1,H,W] ++ [B,C2,H,W] -> [B,C1+C2,H,W]
Var concat_channels(const Var& a, const Var& b);

} // namespace diffrx::numcore
