#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "strider/autodiff.hpp"

// Differentiable operations. Shapes are row-major; "rows" means the product
// of all leading extents and "cols" the last extent.
namespace strider::ops {

// Broadcasting: `b` must have the same shape as `a` or equal a trailing
// suffix of it (e.g. a bias row added to every row of a [B, L, D] tensor).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);

template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> softplus(const Var<T>& a);
template <typename T> Var<T> silu(const Var<T>& a);
// Exact (erf) GELU.
template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

/// [..., k] x [k, n] -> [..., n].
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x W + bias, with W stored [in, out]. `bias` may be invalid (no bias).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& gamma, T eps = T(1e-5));

/// Softmax over the last axis with a single-pass running max and sum.
template <typename T> Var<T> softmax(const Var<T>& x);

/// Depthwise causal convolution. x [B, L, E], weight [E, K], bias [E];
/// out[b, t, e] = bias[e] + sum_j weight[e, j] * x[b, t - (K - 1) + j, e]
/// with zeros left of the sequence start.
template <typename T>
Var<T> causal_conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Picks rows (last-axis vectors) of x by flat row index; output shape is
/// `lead` + [cols]. Repeated indices accumulate in the backward pass.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::int64_t> rows, const Shape& lead);

template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <typename T> Var<T> slice(const Var<T>& x, int axis, std::int64_t start, std::int64_t len);
template <typename T> Var<T> reshape(const Var<T>& x, const Shape& shape);
/// Repeats x `n` times along a new leading axis.
template <typename T> Var<T> tile(const Var<T>& x, std::int64_t n);

/// Mean squared error against a constant target of the same shape.
template <typename T> Var<T> mse(const Var<T>& pred, const Tensor<T>& target);

/// Mean over rows of weight[r] * -log softmax(z_r - margin[r] * e_{y_r})[y_r].
/// Empty `margins` / `weights` mean zero margins / unit weights.
template <typename T>
Var<T> margin_cross_entropy(const Var<T>& logits, std::span<const int> labels,
                            std::span<const T> margins, std::span<const T> weights);
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);

/// Fused discretization and selective scan. x, delta [B, L, E]; a [E, N];
/// b_in, c_in [B, L, N]. Per lane: h_t = exp(delta_t a) h_{t-1} +
/// delta_t b_t x_t, y_t = <c_t, h_t>. Returns y [B, L, E].
template <typename T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& a,
                      const Var<T>& b_in, const Var<T>& c_in);

/// Multi-head scaled dot-product attention over [B, L, D] inputs, computed
/// tile by tile with an online softmax; the backward pass recomputes
/// probabilities from the saved log-sum-exp.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int n_heads,
                 int tile = 64);

}  // namespace strider::ops
