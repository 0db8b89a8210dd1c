#include "strider/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "kernels.hpp"

namespace strider {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace ops {
namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw Error(Errc::shape_mismatch, op + ": " + detail);
}

// Number of elements of `b` when it is `a` or a trailing suffix of `a`.
std::int64_t broadcast_inner(const std::string& op, const Shape& a, const Shape& b) {
  if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    shape_error(op, "cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
  }
  return shape_numel(b);
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  auto& g = a.graph();
  const auto& av = a.value();
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < av.data.size(); ++i) out.data[i] = f(av.data[i]);
  const int ia = a.id();
  return g.record(std::move(out), g.needs_grad(ia),
                  [ia, df](Graph<T>& g, const Tensor<T>& y, const Tensor<T>& gy) {
                    const auto& x = g.value(ia);
                    auto& gx = g.grad(ia);
                    for (std::size_t i = 0; i < gy.data.size(); ++i) {
                      gx.data[i] += gy.data[i] * df(x.data[i], y.data[i]);
                    }
                  });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T x) {
  if (x > T(20)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& g = a.graph();
  const auto inner = broadcast_inner("add", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape);
  for (std::int64_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] + bv.data[i % inner];
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), g.needs_grad(ia) || g.needs_grad(ib),
                  [ia, ib, inner](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    if (g.needs_grad(ia)) accumulate(g.grad(ia), gy);
                    if (g.needs_grad(ib)) {
                      auto& gb = g.grad(ib);
                      for (std::int64_t i = 0; i < gy.numel(); ++i) gb.data[i % inner] += gy.data[i];
                    }
                  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto& g = a.graph();
  const auto inner = broadcast_inner("sub", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape);
  for (std::int64_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] - bv.data[i % inner];
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), g.needs_grad(ia) || g.needs_grad(ib),
                  [ia, ib, inner](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    if (g.needs_grad(ia)) accumulate(g.grad(ia), gy);
                    if (g.needs_grad(ib)) {
                      auto& gb = g.grad(ib);
                      for (std::int64_t i = 0; i < gy.numel(); ++i) gb.data[i % inner] -= gy.data[i];
                    }
                  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& g = a.graph();
  const auto inner = broadcast_inner("mul", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape);
  for (std::int64_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] * bv.data[i % inner];
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), g.needs_grad(ia) || g.needs_grad(ib),
                  [ia, ib, inner](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    const auto& av = g.value(ia);
                    const auto& bv = g.value(ib);
                    if (g.needs_grad(ia)) {
                      auto& ga = g.grad(ia);
                      for (std::int64_t i = 0; i < gy.numel(); ++i) {
                        ga.data[i] += gy.data[i] * bv.data[i % inner];
                      }
                    }
                    if (g.needs_grad(ib)) {
                      auto& gb = g.grad(ib);
                      for (std::int64_t i = 0; i < gy.numel(); ++i) {
                        gb.data[i % inner] += gy.data[i] * av.data[i];
                      }
                    }
                  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  return unary(a, [](T x) { return softplus_scalar(x); }, [](T x, T) { return sigmoid_scalar(x); });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  return unary(
      a, [](T x) { return x * sigmoid_scalar(x); },
      [](T x, T) {
        T s = sigmoid_scalar(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  auto& g = a.graph();
  T total = 0;
  for (auto x : a.value().data) total += x;
  const int ia = a.id();
  return g.record(Tensor<T>::scalar(total), g.needs_grad(ia),
                  [ia](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    auto& ga = g.grad(ia);
                    for (auto& x : ga.data) x += gy.data[0];
                  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const auto n = a.value().numel();
  return scale(sum(a), n == 0 ? T(0) : T(1) / static_cast<T>(n));
}

namespace {

template <typename T>
Var<T> matmul_impl(const char* op, const Var<T>& a, const Var<T>& w, const Var<T>* bias) {
  auto& g = a.graph();
  const auto& av = a.value();
  const auto& wv = w.value();
  if (wv.rank() != 2 || av.rank() < 1 || av.cols() != wv.dim(0)) {
    shape_error(op, shape_str(av.shape) + " x " + shape_str(wv.shape));
  }
  const std::int64_t k = wv.dim(0), n = wv.dim(1), m = av.rows();
  Shape out_shape = av.shape;
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  int ib = -1;
  if (bias != nullptr && bias->valid()) {
    if (bias->value().numel() != n) shape_error(op, "bias length does not match output width");
    ib = bias->id();
    const auto& bv = bias->value();
    for (std::int64_t r = 0; r < m; ++r) std::copy_n(bv.ptr(), n, out.ptr() + r * n);
  }
  kernels::gemm_nn(m, n, k, av.ptr(), wv.ptr(), out.ptr());
  const int ia = a.id(), iw = w.id();
  bool needs = g.needs_grad(ia) || g.needs_grad(iw) || (ib >= 0 && g.needs_grad(ib));
  return g.record(std::move(out), needs,
                  [ia, iw, ib, m, n, k](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    if (g.needs_grad(ia)) {
                      kernels::gemm_nt(m, k, n, gy.ptr(), g.value(iw).ptr(), g.grad(ia).ptr());
                    }
                    if (g.needs_grad(iw)) {
                      kernels::gemm_tn(k, n, m, g.value(ia).ptr(), gy.ptr(), g.grad(iw).ptr());
                    }
                    if (ib >= 0 && g.needs_grad(ib)) {
                      auto& gb = g.grad(ib);
                      for (std::int64_t r = 0; r < m; ++r) {
                        for (std::int64_t j = 0; j < n; ++j) gb.data[j] += gy.data[r * n + j];
                      }
                    }
                  });
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return matmul_impl<T>("matmul", a, b, nullptr);
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return matmul_impl<T>("linear", x, weight, &bias);
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const std::int64_t d = xv.cols(), rows = xv.rows();
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    shape_error("layer_norm", "affine parameters must have length " + std::to_string(d));
  }
  Tensor<T> out(xv.shape);
  Tensor<T> rstd(Shape{rows});
  const T* gv = gamma.value().ptr();
  const T* bv = beta.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * d;
    T mu = 0;
    for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    T rs = T(1) / std::sqrt(var + eps);
    rstd.data[r] = rs;
    T* yr = out.ptr() + r * d;
    for (std::int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rs * gv[j] + bv[j];
  }
  const int ix = x.id(), ig = gamma.id(), ibeta = beta.id();
  bool needs = g.needs_grad(ix) || g.needs_grad(ig) || g.needs_grad(ibeta);
  return g.record(
      std::move(out), needs,
      [ix, ig, ibeta, d, rows, rstd = std::move(rstd)](Graph<T>& g, const Tensor<T>&,
                                                        const Tensor<T>& gy) {
        const auto& xv = g.value(ix);
        const T* gv = g.value(ig).ptr();
        std::vector<T> xhat(static_cast<std::size_t>(d));
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = xv.ptr() + r * d;
          const T* gr = gy.ptr() + r * d;
          T mu = 0;
          for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
          mu /= static_cast<T>(d);
          const T rs = rstd.data[r];
          T mean_dxh = 0, mean_dxh_xh = 0;
          for (std::int64_t j = 0; j < d; ++j) {
            xhat[j] = (xr[j] - mu) * rs;
            T dxh = gr[j] * gv[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat[j];
          }
          mean_dxh /= static_cast<T>(d);
          mean_dxh_xh /= static_cast<T>(d);
          if (g.needs_grad(ix)) {
            T* gx = g.grad(ix).ptr() + r * d;
            for (std::int64_t j = 0; j < d; ++j) {
              gx[j] += rs * (gr[j] * gv[j] - mean_dxh - xhat[j] * mean_dxh_xh);
            }
          }
          if (g.needs_grad(ig)) {
            T* gg = g.grad(ig).ptr();
            for (std::int64_t j = 0; j < d; ++j) gg[j] += gr[j] * xhat[j];
          }
          if (g.needs_grad(ibeta)) {
            T* gb = g.grad(ibeta).ptr();
            for (std::int64_t j = 0; j < d; ++j) gb[j] += gr[j];
          }
        }
      });
}

template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& gamma, T eps) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const std::int64_t d = xv.cols(), rows = xv.rows();
  if (gamma.value().numel() != d) {
    shape_error("rms_norm", "scale must have length " + std::to_string(d));
  }
  Tensor<T> out(xv.shape);
  Tensor<T> rinv(Shape{rows});
  const T* gv = gamma.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * d;
    T ms = 0;
    for (std::int64_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms /= static_cast<T>(d);
    T ri = T(1) / std::sqrt(ms + eps);
    rinv.data[r] = ri;
    T* yr = out.ptr() + r * d;
    for (std::int64_t j = 0; j < d; ++j) yr[j] = xr[j] * ri * gv[j];
  }
  const int ix = x.id(), ig = gamma.id();
  return g.record(
      std::move(out), g.needs_grad(ix) || g.needs_grad(ig),
      [ix, ig, d, rows, rinv = std::move(rinv)](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
        const auto& xv = g.value(ix);
        const T* gv = g.value(ig).ptr();
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = xv.ptr() + r * d;
          const T* gr = gy.ptr() + r * d;
          const T ri = rinv.data[r];
          if (g.needs_grad(ix)) {
            T dot = 0;
            for (std::int64_t j = 0; j < d; ++j) dot += gr[j] * gv[j] * xr[j];
            dot /= static_cast<T>(d);
            T* gx = g.grad(ix).ptr() + r * d;
            for (std::int64_t j = 0; j < d; ++j) {
              gx[j] += ri * (gr[j] * gv[j] - xr[j] * ri * ri * dot);
            }
          }
          if (g.needs_grad(ig)) {
            T* gg = g.grad(ig).ptr();
            for (std::int64_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j] * ri;
          }
        }
      });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const std::int64_t d = xv.cols(), rows = xv.rows();
  Tensor<T> out(xv.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * d;
    T m = -std::numeric_limits<T>::infinity();
    T s = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      if (xr[j] > m) {
        s = s * std::exp(m - xr[j]) + T(1);
        m = xr[j];
      } else {
        s += std::exp(xr[j] - m);
      }
    }
    T* yr = out.ptr() + r * d;
    for (std::int64_t j = 0; j < d; ++j) yr[j] = std::exp(xr[j] - m) / s;
  }
  const int ix = x.id();
  return g.record(std::move(out), g.needs_grad(ix),
                  [ix, d, rows](Graph<T>& g, const Tensor<T>& y, const Tensor<T>& gy) {
                    auto& gx = g.grad(ix);
                    for (std::int64_t r = 0; r < rows; ++r) {
                      const T* yr = y.ptr() + r * d;
                      const T* gr = gy.ptr() + r * d;
                      T dot = 0;
                      for (std::int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
                      T* out = gx.ptr() + r * d;
                      for (std::int64_t j = 0; j < d; ++j) out[j] += yr[j] * (gr[j] - dot);
                    }
                  });
}

template <typename T>
Var<T> causal_conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 2 || wv.dim(0) != xv.dim(2) ||
      bias.value().numel() != xv.dim(2)) {
    shape_error("causal_conv1d", "x " + shape_str(xv.shape) + ", weight " + shape_str(wv.shape));
  }
  const std::int64_t B = xv.dim(0), L = xv.dim(1), E = xv.dim(2), K = wv.dim(1);
  Tensor<T> out(xv.shape);
  const T* bv = bias.value().ptr();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t t = 0; t < L; ++t) {
      T* yr = out.ptr() + (b * L + t) * E;
      std::copy_n(bv, E, yr);
      for (std::int64_t j = 0; j < K; ++j) {
        std::int64_t src = t - (K - 1) + j;
        if (src < 0) continue;
        const T* xr = xv.ptr() + (b * L + src) * E;
        for (std::int64_t e = 0; e < E; ++e) yr[e] += wv.data[e * K + j] * xr[e];
      }
    }
  }
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  bool needs = g.needs_grad(ix) || g.needs_grad(iw) || g.needs_grad(ib);
  return g.record(std::move(out), needs,
                  [ix, iw, ib, B, L, E, K](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    const auto& xv = g.value(ix);
                    const auto& wv = g.value(iw);
                    T* gx = g.needs_grad(ix) ? g.grad(ix).ptr() : nullptr;
                    T* gw = g.needs_grad(iw) ? g.grad(iw).ptr() : nullptr;
                    T* gb = g.needs_grad(ib) ? g.grad(ib).ptr() : nullptr;
                    for (std::int64_t b = 0; b < B; ++b) {
                      for (std::int64_t t = 0; t < L; ++t) {
                        const T* gr = gy.ptr() + (b * L + t) * E;
                        if (gb) {
                          for (std::int64_t e = 0; e < E; ++e) gb[e] += gr[e];
                        }
                        for (std::int64_t j = 0; j < K; ++j) {
                          std::int64_t src = t - (K - 1) + j;
                          if (src < 0) continue;
                          const std::int64_t off = (b * L + src) * E;
                          for (std::int64_t e = 0; e < E; ++e) {
                            if (gx) gx[off + e] += wv.data[e * K + j] * gr[e];
                            if (gw) gw[e * K + j] += xv.data[off + e] * gr[e];
                          }
                        }
                      }
                    }
                  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::int64_t> rows, const Shape& lead) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const std::int64_t d = xv.cols(), n_rows = xv.rows();
  if (shape_numel(lead) != static_cast<std::int64_t>(rows.size())) {
    shape_error("gather_rows", "lead shape " + shape_str(lead) + " does not hold " +
                                   std::to_string(rows.size()) + " rows");
  }
  Shape out_shape = lead;
  out_shape.push_back(d);
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n_rows) {
      shape_error("gather_rows", "row index " + std::to_string(rows[r]) + " out of range");
    }
    std::copy_n(xv.ptr() + rows[r] * d, d, out.ptr() + static_cast<std::int64_t>(r) * d);
  }
  const int ix = x.id();
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  return g.record(std::move(out), g.needs_grad(ix),
                  [ix, d, idx = std::move(idx)](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    T* gx = g.grad(ix).ptr();
                    for (std::size_t r = 0; r < idx.size(); ++r) {
                      const T* src = gy.ptr() + static_cast<std::int64_t>(r) * d;
                      T* dst = gx + idx[r] * d;
                      for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  auto& g = parts.front().graph();
  const Shape& first = parts.front().shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) shape_error("concat", "axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first[i];
  for (int i = axis + 1; i < rank; ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::int64_t> widths;
  std::vector<int> ids;
  bool needs = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != rank) shape_error("concat", "rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && s[i] != first[i]) {
        shape_error("concat", shape_str(s) + " vs " + shape_str(first));
      }
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis] * inner);
    ids.push_back(p.id());
    needs = needs || g.needs_grad(p.id());
  }
  const std::int64_t row = out_shape[axis] * inner;
  Tensor<T> out(out_shape);
  std::int64_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].value().ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[p], widths[p], out.ptr() + o * row + offset);
    }
    offset += widths[p];
  }
  return g.record(std::move(out), needs,
                  [ids, widths, outer, row](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    std::int64_t offset = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      if (g.needs_grad(ids[p])) {
                        T* dst = g.grad(ids[p]).ptr();
                        for (std::int64_t o = 0; o < outer; ++o) {
                          const T* src = gy.ptr() + o * row + offset;
                          T* d = dst + o * widths[p];
                          for (std::int64_t j = 0; j < widths[p]; ++j) d[j] += src[j];
                        }
                      }
                      offset += widths[p];
                    }
                  });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::int64_t start, std::int64_t len) {
  auto& g = x.graph();
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank || start < 0 || len < 0 || start + len > s[axis]) {
    shape_error("slice", "range [" + std::to_string(start) + ", +" + std::to_string(len) +
                             ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < rank; ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = len;
  Tensor<T> out(out_shape);
  const std::int64_t src_row = s[axis] * inner, dst_row = len * inner, off = start * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().ptr() + o * src_row + off, dst_row, out.ptr() + o * dst_row);
  }
  const int ix = x.id();
  return g.record(std::move(out), g.needs_grad(ix),
                  [ix, outer, src_row, dst_row, off](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    T* gx = g.grad(ix).ptr();
                    for (std::int64_t o = 0; o < outer; ++o) {
                      T* d = gx + o * src_row + off;
                      const T* src = gy.ptr() + o * dst_row;
                      for (std::int64_t j = 0; j < dst_row; ++j) d[j] += src[j];
                    }
                  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, const Shape& shape) {
  auto& g = x.graph();
  if (shape_numel(shape) != x.value().numel()) {
    shape_error("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor<T> out(shape, x.value().data);
  const int ix = x.id();
  return g.record(std::move(out), g.needs_grad(ix),
                  [ix](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    accumulate(g.grad(ix), gy);
                  });
}

template <typename T>
Var<T> tile(const Var<T>& x, std::int64_t n) {
  auto& g = x.graph();
  const auto& xv = x.value();
  Shape out_shape = xv.shape;
  out_shape.insert(out_shape.begin(), n);
  Tensor<T> out(out_shape);
  const std::int64_t m = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) std::copy_n(xv.ptr(), m, out.ptr() + i * m);
  const int ix = x.id();
  return g.record(std::move(out), g.needs_grad(ix),
                  [ix, n, m](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    T* gx = g.grad(ix).ptr();
                    for (std::int64_t i = 0; i < n; ++i) {
                      for (std::int64_t j = 0; j < m; ++j) gx[j] += gy.data[i * m + j];
                    }
                  });
}

template <typename T>
Var<T> mse(const Var<T>& pred, const Tensor<T>& target) {
  auto& g = pred.graph();
  const auto& pv = pred.value();
  if (pv.shape != target.shape) {
    shape_error("mse", shape_str(pv.shape) + " vs target " + shape_str(target.shape));
  }
  const std::int64_t n = pv.numel();
  T total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    T diff = pv.data[i] - target.data[i];
    total += diff * diff;
  }
  T loss = n == 0 ? T(0) : total / static_cast<T>(n);
  const int ip = pred.id();
  return g.record(Tensor<T>::scalar(loss), g.needs_grad(ip),
                  [ip, n, target](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                    if (n == 0) return;
                    const auto& pv = g.value(ip);
                    auto& gp = g.grad(ip);
                    const T f = T(2) * gy.data[0] / static_cast<T>(n);
                    for (std::int64_t i = 0; i < n; ++i) gp.data[i] += f * (pv.data[i] - target.data[i]);
                  });
}

template <typename T>
Var<T> margin_cross_entropy(const Var<T>& logits, std::span<const int> labels,
                            std::span<const T> margins, std::span<const T> weights) {
  auto& g = logits.graph();
  const auto& zv = logits.value();
  const std::int64_t c = zv.cols(), rows = zv.rows();
  if (static_cast<std::int64_t>(labels.size()) != rows ||
      (!margins.empty() && static_cast<std::int64_t>(margins.size()) != rows) ||
      (!weights.empty() && static_cast<std::int64_t>(weights.size()) != rows)) {
    shape_error("cross_entropy", "labels/margins/weights must have one entry per row");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw Error(Errc::label_out_of_range,
                  "label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  // Shifted-logit softmax per row, kept for the backward pass.
  Tensor<T> probs(zv.shape);
  T total = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* zr = zv.ptr() + r * c;
    T* pr = probs.ptr() + r * c;
    const int y = labels[r];
    const T margin = margins.empty() ? T(0) : margins[r];
    T m = -std::numeric_limits<T>::infinity();
    for (std::int64_t j = 0; j < c; ++j) {
      pr[j] = zr[j] - (j == y ? margin : T(0));
      m = std::max(m, pr[j]);
    }
    T s = 0;
    for (std::int64_t j = 0; j < c; ++j) s += std::exp(pr[j] - m);
    const T lse = m + std::log(s);
    const T w = weights.empty() ? T(1) : weights[r];
    total += w * (lse - pr[y]);
    for (std::int64_t j = 0; j < c; ++j) pr[j] = std::exp(pr[j] - lse);
  }
  const T loss = rows == 0 ? T(0) : total / static_cast<T>(rows);
  const int iz = logits.id();
  std::vector<int> ys(labels.begin(), labels.end());
  std::vector<T> ws(weights.begin(), weights.end());
  return g.record(
      Tensor<T>::scalar(loss), g.needs_grad(iz),
      [iz, c, rows, probs = std::move(probs), ys = std::move(ys), ws = std::move(ws)](
          Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
        auto& gz = g.grad(iz);
        for (std::int64_t r = 0; r < rows; ++r) {
          const T f = gy.data[0] * (ws.empty() ? T(1) : ws[r]) / static_cast<T>(rows);
          const T* pr = probs.ptr() + r * c;
          T* gr = gz.ptr() + r * c;
          for (std::int64_t j = 0; j < c; ++j) gr[j] += f * (pr[j] - (j == ys[r] ? T(1) : T(0)));
        }
      });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  return margin_cross_entropy<T>(logits, labels, {}, {});
}

template <typename T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& a,
                      const Var<T>& b_in, const Var<T>& c_in) {
  auto& g = x.graph();
  const auto& xv = x.value();
  const auto& dv = delta.value();
  const auto& av = a.value();
  const auto& bv = b_in.value();
  const auto& cv = c_in.value();
  if (xv.rank() != 3 || dv.shape != xv.shape || av.rank() != 2 || av.dim(0) != xv.dim(2) ||
      bv.rank() != 3 || bv.dim(0) != xv.dim(0) || bv.dim(1) != xv.dim(1) ||
      bv.dim(2) != av.dim(1) || cv.shape != bv.shape) {
    shape_error("selective_scan", "x " + shape_str(xv.shape) + ", delta " + shape_str(dv.shape) +
                                      ", A " + shape_str(av.shape) + ", B " + shape_str(bv.shape) +
                                      ", C " + shape_str(cv.shape));
  }
  const std::int64_t B = xv.dim(0), L = xv.dim(1), E = xv.dim(2), N = av.dim(1);
  Tensor<T> out(xv.shape);
  std::vector<T> h(static_cast<std::size_t>(E * N));
  for (std::int64_t b = 0; b < B; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::int64_t t = 0; t < L; ++t) {
      const std::int64_t row = b * L + t;
      const T* br = bv.ptr() + row * N;
      const T* cr = cv.ptr() + row * N;
      for (std::int64_t e = 0; e < E; ++e) {
        const T d = dv.data[row * E + e];
        const T dx = d * xv.data[row * E + e];
        const T* ar = av.ptr() + e * N;
        T* he = h.data() + e * N;
        T y = 0;
        for (std::int64_t n = 0; n < N; ++n) {
          he[n] = std::exp(d * ar[n]) * he[n] + dx * br[n];
          y += cr[n] * he[n];
        }
        out.data[row * E + e] = y;
      }
    }
  }
  const int ix = x.id(), id = delta.id(), ia = a.id(), ib = b_in.id(), ic = c_in.id();
  bool needs = g.needs_grad(ix) || g.needs_grad(id) || g.needs_grad(ia) || g.needs_grad(ib) ||
               g.needs_grad(ic);
  return g.record(
      std::move(out), needs,
      [ix, id, ia, ib, ic, B, L, E, N](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
        const auto& xv = g.value(ix);
        const auto& dv = g.value(id);
        const auto& av = g.value(ia);
        const auto& bv = g.value(ib);
        const auto& cv = g.value(ic);
        T* gx = g.needs_grad(ix) ? g.grad(ix).ptr() : nullptr;
        T* gd = g.needs_grad(id) ? g.grad(id).ptr() : nullptr;
        T* ga = g.needs_grad(ia) ? g.grad(ia).ptr() : nullptr;
        T* gb = g.needs_grad(ib) ? g.grad(ib).ptr() : nullptr;
        T* gc = g.needs_grad(ic) ? g.grad(ic).ptr() : nullptr;
        const std::size_t lane = static_cast<std::size_t>(E * N);
        // States and decay factors of one batch element, recomputed here.
        std::vector<T> hs(static_cast<std::size_t>(L) * lane);
        std::vector<T> abar(static_cast<std::size_t>(L) * lane);
        std::vector<T> gh(lane);
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t t = 0; t < L; ++t) {
            const std::int64_t row = b * L + t;
            const T* br = bv.ptr() + row * N;
            T* ht = hs.data() + t * lane;
            T* at = abar.data() + t * lane;
            const T* hp = t > 0 ? hs.data() + (t - 1) * lane : nullptr;
            for (std::int64_t e = 0; e < E; ++e) {
              const T d = dv.data[row * E + e];
              const T dx = d * xv.data[row * E + e];
              const T* ar = av.ptr() + e * N;
              for (std::int64_t n = 0; n < N; ++n) {
                const std::int64_t k = e * N + n;
                at[k] = std::exp(d * ar[n]);
                ht[k] = (hp ? at[k] * hp[k] : T(0)) + dx * br[n];
              }
            }
          }
          std::fill(gh.begin(), gh.end(), T(0));
          for (std::int64_t t = L - 1; t >= 0; --t) {
            const std::int64_t row = b * L + t;
            const T* br = bv.ptr() + row * N;
            const T* cr = cv.ptr() + row * N;
            const T* ht = hs.data() + t * lane;
            const T* at = abar.data() + t * lane;
            const T* an = t + 1 < L ? abar.data() + (t + 1) * lane : nullptr;
            const T* hp = t > 0 ? hs.data() + (t - 1) * lane : nullptr;
            for (std::int64_t e = 0; e < E; ++e) {
              const T go = gy.data[row * E + e];
              const T d = dv.data[row * E + e];
              const T xval = xv.data[row * E + e];
              const T* ar = av.ptr() + e * N;
              T dd = 0, dxs = 0;
              for (std::int64_t n = 0; n < N; ++n) {
                const std::int64_t k = e * N + n;
                // Gradient reaching h_t: direct output term plus the carry.
                T gk = go * cr[n] + (an ? an[k] * gh[k] : T(0));
                gh[k] = gk;
                if (gc) gc[row * N + n] += go * ht[k];
                if (hp) {
                  const T da = gk * hp[k] * at[k];
                  dd += da * ar[n];
                  if (ga) ga[k] += da * d;
                }
                dd += gk * br[n] * xval;
                dxs += gk * d * br[n];
                if (gb) gb[row * N + n] += gk * d * xval;
              }
              if (gd) gd[row * E + e] += dd;
              if (gx) gx[row * E + e] += dxs;
            }
          }
        }
      });
}

namespace {

// Copies head h of x [B, L, D] for batch b into rows [L, hd]; with
// `transpose` the layout is [hd, L] instead.
template <typename T>
void pack_head(const Tensor<T>& x, std::int64_t b, std::int64_t h, std::int64_t hd, bool transpose,
               std::vector<T>& out) {
  const std::int64_t L = x.dim(1), D = x.dim(2);
  out.resize(static_cast<std::size_t>(L * hd));
  for (std::int64_t i = 0; i < L; ++i) {
    const T* src = x.ptr() + (b * L + i) * D + h * hd;
    for (std::int64_t d = 0; d < hd; ++d) {
      out[static_cast<std::size_t>(transpose ? d * L + i : i * hd + d)] = src[d];
    }
  }
}

// s[j] = <q, column j of kt> for j in [j0, j0 + nj), kt laid out [hd, L].
template <typename T>
void scores(const T* q, const T* kt, std::int64_t L, std::int64_t hd, std::int64_t j0,
            std::int64_t nj, T* s) {
  std::fill_n(s, nj, T(0));
  for (std::int64_t d = 0; d < hd; ++d) {
    const T x = q[d];
    const T* kr = kt + d * L + j0;
    for (std::int64_t j = 0; j < nj; ++j) s[j] += x * kr[j];
  }
}

}  // namespace

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int n_heads, int tile) {
  auto& g = q.graph();
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  if (qv.rank() != 3 || kv.shape != qv.shape || vv.shape != qv.shape || n_heads <= 0 ||
      qv.dim(2) % n_heads != 0 || tile <= 0) {
    shape_error("attention", "q " + shape_str(qv.shape) + ", k " + shape_str(kv.shape) + ", v " +
                                 shape_str(vv.shape) + ", heads " + std::to_string(n_heads));
  }
  const std::int64_t B = qv.dim(0), L = qv.dim(1), D = qv.dim(2), H = n_heads, hd = D / H;
  const T sc = T(1) / std::sqrt(static_cast<T>(hd));
  Tensor<T> out(qv.shape);
  Tensor<T> lse(Shape{B, H, L});
  std::vector<T> qh, kt, vh, oh(static_cast<std::size_t>(hd));
  std::vector<T> s(static_cast<std::size_t>(tile));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t h = 0; h < H; ++h) {
      pack_head(qv, b, h, hd, false, qh);
      pack_head(kv, b, h, hd, true, kt);
      pack_head(vv, b, h, hd, false, vh);
      for (std::int64_t i = 0; i < L; ++i) {
        const T* qi = qh.data() + i * hd;
        T m = -std::numeric_limits<T>::infinity();
        T l = 0;
        std::fill(oh.begin(), oh.end(), T(0));
        // Online softmax over key tiles: only one tile of scores is live.
        for (std::int64_t j0 = 0; j0 < L; j0 += tile) {
          const std::int64_t nj = std::min<std::int64_t>(tile, L - j0);
          scores(qi, kt.data(), L, hd, j0, nj, s.data());
          T row_max = m;
          for (std::int64_t j = 0; j < nj; ++j) {
            s[static_cast<std::size_t>(j)] *= sc;
            row_max = std::max(row_max, s[static_cast<std::size_t>(j)]);
          }
          const T corr = std::exp(m - row_max);
          for (auto& o : oh) o *= corr;
          T psum = 0;
          for (std::int64_t j = 0; j < nj; ++j) {
            const T p = std::exp(s[static_cast<std::size_t>(j)] - row_max);
            psum += p;
            const T* vj = vh.data() + (j0 + j) * hd;
            for (std::int64_t d = 0; d < hd; ++d) oh[static_cast<std::size_t>(d)] += p * vj[d];
          }
          l = l * corr + psum;
          m = row_max;
        }
        T* oi = out.ptr() + (b * L + i) * D + h * hd;
        for (std::int64_t d = 0; d < hd; ++d) oi[d] = oh[static_cast<std::size_t>(d)] / l;
        lse.data[static_cast<std::size_t>((b * H + h) * L + i)] = m + std::log(l);
      }
    }
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  bool needs = g.needs_grad(iq) || g.needs_grad(ik) || g.needs_grad(iv);
  return g.record(
      std::move(out), needs,
      [iq, ik, iv, B, L, D, H, hd, sc, lse = std::move(lse)](
          Graph<T>& g, const Tensor<T>& o, const Tensor<T>& go) {
        const auto& qv = g.value(iq);
        const auto& kv = g.value(ik);
        const auto& vv = g.value(iv);
        T* gq = g.needs_grad(iq) ? g.grad(iq).ptr() : nullptr;
        T* gk = g.needs_grad(ik) ? g.grad(ik).ptr() : nullptr;
        T* gv = g.needs_grad(iv) ? g.grad(iv).ptr() : nullptr;
        const auto n = static_cast<std::size_t>(L * hd);
        std::vector<T> qh, kh, kt, vt, gh, dq(n), dk(n), dv(n);
        std::vector<T> p(static_cast<std::size_t>(L)), ds(static_cast<std::size_t>(L));
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t h = 0; h < H; ++h) {
            pack_head(qv, b, h, hd, false, qh);
            pack_head(kv, b, h, hd, false, kh);
            pack_head(kv, b, h, hd, true, kt);
            pack_head(vv, b, h, hd, true, vt);
            pack_head(go, b, h, hd, false, gh);
            std::fill(dq.begin(), dq.end(), T(0));
            std::fill(dk.begin(), dk.end(), T(0));
            std::fill(dv.begin(), dv.end(), T(0));
            // Probabilities are rebuilt one query row at a time from the
            // saved log-sum-exp.
            for (std::int64_t i = 0; i < L; ++i) {
              const T* qi = qh.data() + i * hd;
              const T* gi = gh.data() + i * hd;
              const T* oi = o.ptr() + (b * L + i) * D + h * hd;
              T delta = 0;
              for (std::int64_t d = 0; d < hd; ++d) delta += oi[d] * gi[d];
              const T lse_i = lse.data[static_cast<std::size_t>((b * H + h) * L + i)];
              scores(qi, kt.data(), L, hd, 0, L, p.data());
              scores(gi, vt.data(), L, hd, 0, L, ds.data());
              for (std::int64_t j = 0; j < L; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                p[ju] = std::exp(p[ju] * sc - lse_i);
                ds[ju] = p[ju] * (ds[ju] - delta) * sc;
              }
              T* dqi = dq.data() + i * hd;
              for (std::int64_t j = 0; j < L; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                const T* kj = kh.data() + j * hd;
                T* dkj = dk.data() + j * hd;
                T* dvj = dv.data() + j * hd;
                for (std::int64_t d = 0; d < hd; ++d) {
                  dqi[d] += ds[ju] * kj[d];
                  dkj[d] += ds[ju] * qi[d];
                  dvj[d] += p[ju] * gi[d];
                }
              }
            }
            for (std::int64_t i = 0; i < L; ++i) {
              const std::int64_t row = (b * L + i) * D + h * hd;
              for (std::int64_t d = 0; d < hd; ++d) {
                const auto at = static_cast<std::size_t>(i * hd + d);
                if (gq) gq[row + d] += dq[at];
                if (gk) gk[row + d] += dk[at];
                if (gv) gv[row + d] += dv[at];
              }
            }
          }
        }
      });
}

#define STRIDER_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                            \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                            \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale(const Var<T>&, T);                                                      \
  template Var<T> exp(const Var<T>&);                                                           \
  template Var<T> log(const Var<T>&);                                                           \
  template Var<T> sigmoid(const Var<T>&);                                                       \
  template Var<T> softplus(const Var<T>&);                                                      \
  template Var<T> silu(const Var<T>&);                                                          \
  template Var<T> gelu(const Var<T>&);                                                          \
  template Var<T> tanh(const Var<T>&);                                                          \
  template Var<T> sum(const Var<T>&);                                                           \
  template Var<T> mean(const Var<T>&);                                                          \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                         \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                   \
  template Var<T> rms_norm(const Var<T>&, const Var<T>&, T);                                    \
  template Var<T> softmax(const Var<T>&);                                                       \
  template Var<T> causal_conv1d(const Var<T>&, const Var<T>&, const Var<T>&);                   \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::int64_t>, const Shape&);      \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                      \
  template Var<T> slice(const Var<T>&, int, std::int64_t, std::int64_t);                        \
  template Var<T> reshape(const Var<T>&, const Shape&);                                         \
  template Var<T> tile(const Var<T>&, std::int64_t);                                            \
  template Var<T> mse(const Var<T>&, const Tensor<T>&);                                         \
  template Var<T> margin_cross_entropy(const Var<T>&, std::span<const int>, std::span<const T>, \
                                       std::span<const T>);                                     \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>);                           \
  template Var<T> selective_scan(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,    \
                                 const Var<T>&);                                                \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, int, int);

STRIDER_INSTANTIATE_OPS(float)
STRIDER_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace strider
