#pragma once

#include <vector>

#include "rbnet/tensor.hpp"

namespace rbnet {
namespace ops {

// Elementwise and shape plumbing -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor sub(const Tensor& a, const Tensor& b);         // same shape
Tensor mul(const Tensor& a, const Tensor& b);         // same shape, Hadamard
Tensor scale(const Tensor& a, float s);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact Gaussian-CDF form
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);

// Adds a vector of length C to the last axis of x (..., C).
Tensor bias_add_lastdim(const Tensor& x, const Tensor& bias);
// Repeats x (no leading batch axis) n times along a new axis 0; gradient sums
// over the batch. Used for learnable position embeddings.
Tensor expand_batch(const Tensor& x, int n);

Tensor concat(const std::vector<Tensor>& xs, int axis);
std::vector<Tensor> split(const Tensor& x, const std::vector<int>& sizes, int axis);

// Reductions ----------------------------------------------------------------

Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar

// Linear algebra -------------------------------------------------------------

// a: (..., m, k), b: (..., k, n) -> (..., m, n). Leading axes are flattened to
// a batch extent; either side may have batch 1 (broadcast, e.g. shared weight
// matrices). Gradients flow to both operands.
Tensor matmul(const Tensor& a, const Tensor& b);

// Convolutions ----------------------------------------------------------------

// x: (N,Cin,H,W), w: (Cout,Cin,kh,kw), bias: (Cout) or undefined.
// Cross-correlation convention; output extent must be integral.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);

// x: (N,C,H,W), w: (C,1,kh,kw); zero padding chosen to preserve H,W
// (kernel extents must be odd). Channel c sees only kernel c.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);

// Normalization ----------------------------------------------------------------

// Normalizes over `axes` (zero mean, unit variance) then applies gain/bias,
// both shaped like the normalized extents.
Tensor layer_norm(const Tensor& x, const std::vector<int>& axes, const Tensor& gain,
                  const Tensor& bias, float eps = 1e-5f);

// x: (N,C,H,W). Train mode normalizes per channel over (N,H,W) and updates
// running stats in-place (momentum-weighted); eval mode applies running stats.
// Train mode requires N >= 2.
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Tensor& running_mean,
                  Tensor& running_var, bool training, float momentum = 0.1f, float eps = 1e-5f);

// Softmax ----------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis);  // max-subtracted, rows sum to 1

// Attention ---------------------------------------------------------------------

// Streaming scaled-dot-product attention with optional post-softmax
// elementwise reweighting:
//
//   out = rows( softmax(q k^T * scale) .* mult ) v
//
// q: (B,Tq,d), k/v: (B,Tk,d), mult: (Tq,Tk) or undefined. `mult` is treated as
// exp(alpha * dist); when `alpha` is supplied its gradient is accumulated via
// `dist` (same shape as mult). With `renormalize` the reweighted rows are
// rescaled to sum to one before applying v.
//
// The Tq x Tk matrix is never materialized across the batch: forward streams
// row blocks and backward recomputes them, so memory stays O(B*T*d).
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, float scale,
                      const Tensor& mult, const Tensor& dist, const Tensor& alpha,
                      bool renormalize);

// Plain attention (no reweighting).
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, float scale);

// Builds exp(alpha * dist) as a plain buffer (no tape participation; the
// attention core owns the alpha gradient).
Tensor exp_alpha_dist(float alpha, const Tensor& dist);

}  // namespace ops
}  // namespace rbnet
