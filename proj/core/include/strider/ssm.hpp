#pragma once

#include "strider/tensor.hpp"

// Plain (non-differentiable) state-space kernels over explicit discretized
// tensors. The differentiable path used by the model fuses these steps (see
// ops::selective_scan); these exist for verification and benchmarking.
namespace strider::ssm {

template <typename T>
struct Discretized {
  Tensor<T> a_bar;  // [B, L, E, N]
  Tensor<T> b_bar;  // [B, L, E, N]
};

/// a_bar = exp(delta (x) a), b_bar = delta (x) b for delta [B, L, E],
/// a [E, N], b [B, L, N].
template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b);

/// h_t = a_bar_t * h_{t-1} + b_bar_t * x_t with h_0 = 0; y_t = sum_n c_t h_t.
/// c [B, L, N], x [B, L, E]; returns y [B, L, E].
template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                          const Tensor<T>& x);

/// Same recurrence as a chunked associative scan over (a, b) pairs with
/// combine (a2 a1, a2 b1 + b2): each chunk is folded into one pair, a carry
/// pass runs across chunk boundaries, then every chunk is re-scanned from its
/// incoming state. Chunks of the first and last pass are distributed over
/// `threads` workers.
template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                        const Tensor<T>& x, int chunk = 32, int threads = 1);

}  // namespace strider::ssm
