#pragma once

#include <cstdint>
#include <span>

#include "strider/tensor.hpp"

namespace strider {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// AdamW with decoupled weight decay. Parameters flagged decay=false (norm
/// scales, biases, embeddings' special tokens) skip the decay term.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// One update with learning rate `lr`; gradients are zeroed afterwards.
  void step(std::span<Parameter<T>* const> params, double lr);

  std::int64_t steps() const noexcept { return t_; }

 private:
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
};

/// Linear warm-up to `base` over `warmup` steps, then linear decay to zero at
/// `total` steps.
double warmup_decay_lr(double base, std::int64_t step, std::int64_t warmup, std::int64_t total);

}  // namespace strider
