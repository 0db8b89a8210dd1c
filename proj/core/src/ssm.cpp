#include "strider/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace strider::ssm {

namespace {

struct Dims {
  std::int64_t B, L, E, N;
};

template <typename T>
Dims check_scan_shapes(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                       const Tensor<T>& x) {
  if (a_bar.rank() != 4 || b_bar.shape != a_bar.shape) {
    throw Error(Errc::shape_mismatch, "scan: a_bar " + shape_str(a_bar.shape) + ", b_bar " +
                                          shape_str(b_bar.shape));
  }
  Dims d{a_bar.dim(0), a_bar.dim(1), a_bar.dim(2), a_bar.dim(3)};
  if (c.shape != Shape{d.B, d.L, d.N} || x.shape != Shape{d.B, d.L, d.E}) {
    throw Error(Errc::shape_mismatch,
                "scan: c " + shape_str(c.shape) + ", x " + shape_str(x.shape));
  }
  return d;
}

template <typename F>
void run_chunks(std::int64_t n_chunks, int threads, F&& body) {
  if (threads <= 1 || n_chunks <= 1) {
    for (std::int64_t k = 0; k < n_chunks; ++k) body(k);
    return;
  }
  std::vector<std::jthread> pool;
  const std::int64_t workers = std::min<std::int64_t>(threads, n_chunks);
  for (std::int64_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::int64_t k = w; k < n_chunks; k += workers) body(k);
    });
  }
}

}  // namespace

template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b) {
  if (delta.rank() != 3 || a.rank() != 2 || a.dim(0) != delta.dim(2) || b.rank() != 3 ||
      b.dim(0) != delta.dim(0) || b.dim(1) != delta.dim(1) || b.dim(2) != a.dim(1)) {
    throw Error(Errc::shape_mismatch, "discretize: delta " + shape_str(delta.shape) + ", A " +
                                          shape_str(a.shape) + ", B " + shape_str(b.shape));
  }
  const std::int64_t B = delta.dim(0), L = delta.dim(1), E = delta.dim(2), N = a.dim(1);
  Discretized<T> out{Tensor<T>(Shape{B, L, E, N}), Tensor<T>(Shape{B, L, E, N})};
  for (std::int64_t r = 0; r < B * L; ++r) {
    for (std::int64_t e = 0; e < E; ++e) {
      const T d = delta.data[r * E + e];
      for (std::int64_t n = 0; n < N; ++n) {
        const std::int64_t k = (r * E + e) * N + n;
        out.a_bar.data[k] = std::exp(d * a.data[e * N + n]);
        out.b_bar.data[k] = d * b.data[r * N + n];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                          const Tensor<T>& x) {
  const auto [B, L, E, N] = check_scan_shapes(a_bar, b_bar, c, x);
  Tensor<T> y(Shape{B, L, E});
  std::vector<T> h(static_cast<std::size_t>(E * N));
  for (std::int64_t b = 0; b < B; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::int64_t t = 0; t < L; ++t) {
      const std::int64_t r = b * L + t;
      for (std::int64_t e = 0; e < E; ++e) {
        const T xv = x.data[r * E + e];
        T acc = 0;
        for (std::int64_t n = 0; n < N; ++n) {
          const std::int64_t k = (r * E + e) * N + n;
          T& hk = h[static_cast<std::size_t>(e * N + n)];
          hk = a_bar.data[k] * hk + b_bar.data[k] * xv;
          acc += c.data[r * N + n] * hk;
        }
        y.data[r * E + e] = acc;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                        const Tensor<T>& x, int chunk, int threads) {
  const auto [B, L, E, N] = check_scan_shapes(a_bar, b_bar, c, x);
  if (chunk <= 0) throw Error(Errc::invalid_config, "scan: chunk must be positive");
  const std::int64_t lanes = E * N;
  const std::int64_t n_chunks = (L + chunk - 1) / chunk;
  // Per chunk: product of the decays and the state reached from zero, i.e.
  // the chunk folded with the combine. carry[k] is the state entering chunk k.
  std::vector<T> decay(static_cast<std::size_t>(B * n_chunks * lanes));
  std::vector<T> local(decay.size());
  std::vector<T> carry(decay.size(), T(0));

  auto local_pass = [&](std::int64_t job) {
    const std::int64_t b = job / n_chunks, k = job % n_chunks;
    const std::int64_t t0 = k * chunk, t1 = std::min<std::int64_t>(L, t0 + chunk);
    T* dk = decay.data() + job * lanes;
    T* sk = local.data() + job * lanes;
    std::fill(dk, dk + lanes, T(1));
    std::fill(sk, sk + lanes, T(0));
    for (std::int64_t t = t0; t < t1; ++t) {
      const std::int64_t r = b * L + t;
      const T* ab = a_bar.data.data() + r * lanes;
      const T* bb = b_bar.data.data() + r * lanes;
      for (std::int64_t e = 0; e < E; ++e) {
        const T xv = x.data[r * E + e];
        for (std::int64_t n = 0; n < N; ++n) {
          const std::int64_t j = e * N + n;
          dk[j] = ab[j] * dk[j];
          sk[j] = ab[j] * sk[j] + bb[j] * xv;
        }
      }
    }
  };
  run_chunks(B * n_chunks, threads, local_pass);

  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t k = 1; k < n_chunks; ++k) {
      const std::int64_t prev = (b * n_chunks + k - 1) * lanes;
      T* cur = carry.data() + (b * n_chunks + k) * lanes;
      for (std::int64_t j = 0; j < lanes; ++j) {
        cur[j] = decay[prev + j] * carry[prev + j] + local[prev + j];
      }
    }
  }

  Tensor<T> y(Shape{B, L, E});
  auto fixup_pass = [&](std::int64_t job) {
    const std::int64_t b = job / n_chunks, k = job % n_chunks;
    const std::int64_t t0 = k * chunk, t1 = std::min<std::int64_t>(L, t0 + chunk);
    std::vector<T> h(carry.begin() + job * lanes, carry.begin() + (job + 1) * lanes);
    for (std::int64_t t = t0; t < t1; ++t) {
      const std::int64_t r = b * L + t;
      const T* ab = a_bar.data.data() + r * lanes;
      const T* bb = b_bar.data.data() + r * lanes;
      for (std::int64_t e = 0; e < E; ++e) {
        const T xv = x.data[r * E + e];
        T acc = 0;
        for (std::int64_t n = 0; n < N; ++n) {
          const std::int64_t j = e * N + n;
          h[j] = ab[j] * h[j] + bb[j] * xv;
          acc += c.data[r * N + n] * h[j];
        }
        y.data[r * E + e] = acc;
      }
    }
  };
  run_chunks(B * n_chunks, threads, fixup_pass);
  return y;
}

template Discretized<float> discretize(const Tensor<float>&, const Tensor<float>&,
                                       const Tensor<float>&);
template Discretized<double> discretize(const Tensor<double>&, const Tensor<double>&,
                                        const Tensor<double>&);
template Tensor<float> scan_sequential(const Tensor<float>&, const Tensor<float>&,
                                       const Tensor<float>&, const Tensor<float>&);
template Tensor<double> scan_sequential(const Tensor<double>&, const Tensor<double>&,
                                        const Tensor<double>&, const Tensor<double>&);
template Tensor<float> scan_parallel(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, const Tensor<float>&, int, int);
template Tensor<double> scan_parallel(const Tensor<double>&, const Tensor<double>&,
                                      const Tensor<double>&, const Tensor<double>&, int, int);

}  // namespace strider::ssm
