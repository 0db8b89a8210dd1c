#include "strider/optim.hpp"

#include <algorithm>
#include <cmath>

namespace strider {

template <typename T>
void AdamW<T>::step(std::span<Parameter<T>* const> params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg_.eps);
  for (auto* p : params) {
    const T decay = p->decay ? static_cast<T>(1.0 - lr * cfg_.weight_decay) : T(1);
    auto& w = p->value.data;
    auto& g = p->grad.data;
    auto& m = p->moment1.data;
    auto& v = p->moment2.data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] = w[i] * decay - step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
    p->zero_grad();
  }
}

double warmup_decay_lr(double base, std::int64_t step, std::int64_t warmup, std::int64_t total) {
  if (warmup > 0 && step < warmup) {
    return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (total <= warmup) return base;
  double left = static_cast<double>(total - step) / static_cast<double>(total - warmup);
  return base * std::clamp(left, 0.0, 1.0);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace strider
