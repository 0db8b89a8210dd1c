#pragma once

// Dense kernels shared by the ops. Each output row of gemm_nn is accumulated
// in a fixed order that does not depend on how many rows are processed
// together, so batched and single-sample results agree bit for bit.

#include <algorithm>
#include <cstdint>
#include <vector>

namespace strider::kernels {

namespace detail {

#if defined(__AVX__)
inline constexpr int kVecBytes = 32;
#else
inline constexpr int kVecBytes = 16;
#endif

template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(kVecBytes)));
};

// Register tile of MR rows and NV vectors of columns. Element (r, j) of A is
// a[r * ais + p * aps], so the same code serves A and A^T.
template <typename T, int MR, int NV>
inline void tile(std::int64_t n, std::int64_t p0, std::int64_t p1, const T* a, std::int64_t ais,
                 std::int64_t aps, const T* b, T* c) {
  using V = typename Vec<T>::type;
  constexpr int VL = kVecBytes / static_cast<int>(sizeof(T));
  V acc[MR][NV];
  for (int r = 0; r < MR; ++r) {
    for (int v = 0; v < NV; ++v) __builtin_memcpy(&acc[r][v], c + r * n + v * VL, sizeof(V));
  }
  for (std::int64_t p = p0; p < p1; ++p) {
    const T* br = b + p * n;
    V bv[NV];
    for (int v = 0; v < NV; ++v) __builtin_memcpy(&bv[v], br + v * VL, sizeof(V));
    for (int r = 0; r < MR; ++r) {
      const T x = a[r * ais + p * aps];
      for (int v = 0; v < NV; ++v) acc[r][v] += x * bv[v];
    }
  }
  for (int r = 0; r < MR; ++r) {
    for (int v = 0; v < NV; ++v) __builtin_memcpy(c + r * n + v * VL, &acc[r][v], sizeof(V));
  }
}

template <typename T>
void edge(std::int64_t mr, std::int64_t nr, std::int64_t n, std::int64_t p0, std::int64_t p1,
          const T* a, std::int64_t ais, std::int64_t aps, const T* b, T* c) {
  for (std::int64_t r = 0; r < mr; ++r) {
    for (std::int64_t j = 0; j < nr; ++j) {
      T s = c[r * n + j];
      for (std::int64_t p = p0; p < p1; ++p) s += a[r * ais + p * aps] * b[p * n + j];
      c[r * n + j] = s;
    }
  }
}

// Every C element is c + a_0 b_0 + a_1 b_1 + ... in ascending p, whatever
// the tiling.
template <typename T>
void gemm_strided(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t ais,
                  std::int64_t aps, const T* b, T* c) {
  constexpr int MR = 4;
  constexpr int NV = 2;
  constexpr std::int64_t NR = NV * kVecBytes / static_cast<std::int64_t>(sizeof(T));
  constexpr std::int64_t KC = 256;
  for (std::int64_t p0 = 0; p0 < k; p0 += KC) {
    const std::int64_t p1 = std::min(k, p0 + KC);
    for (std::int64_t i = 0; i < m; i += MR) {
      const std::int64_t mr = std::min<std::int64_t>(MR, m - i);
      std::int64_t j = 0;
      if (mr == MR) {
        for (; j + NR <= n; j += NR) {
          tile<T, MR, NV>(n, p0, p1, a + i * ais, ais, aps, b + j, c + i * n + j);
        }
      }
      if (j < n) edge(mr, n - j, n, p0, p1, a + i * ais, ais, aps, b + j, c + i * n + j);
    }
  }
}

}  // namespace detail

/// C[m, n] += A[m, k] * B[k, n], all row-major and contiguous.
template <typename T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  detail::gemm_strided(m, n, k, a, k, 1, b, c);
}

/// C[m, n] += A^T * B with A stored [k, m] and B stored [k, n].
template <typename T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  detail::gemm_strided(m, n, k, a, 1, m, b, c);
}

/// C[m, n] += A[m, k] * B^T with B stored [n, k].
template <typename T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  std::vector<T> bt(static_cast<std::size_t>(n * k));
  for (std::int64_t j = 0; j < n; ++j) {
    for (std::int64_t p = 0; p < k; ++p) bt[static_cast<std::size_t>(p * n + j)] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace strider::kernels
