#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "strider/error.hpp"

namespace strider {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, std::int64_t b) { return a * b; });
}

std::string shape_str(const Shape& shape);

/// Dense row-major array.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
      throw Error(Errc::shape_mismatch, "tensor data length " + std::to_string(data.size()) +
                                            " does not match shape " + shape_str(shape));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int axis) const {
    return shape[static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)];
  }
  // Last extent; 1 for scalars.
  std::int64_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::int64_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T item() const {
    if (data.size() != 1) throw Error(Errc::not_scalar, "item() on tensor of shape " + shape_str(shape));
    return data[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

/// A learnable tensor with its gradient and AdamW moments.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> moment1;
  Tensor<T> moment2;
  bool decay = true;

  Parameter(std::string n, Tensor<T> init, bool apply_decay = true)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape),
        moment1(value.shape),
        moment2(value.shape),
        decay(apply_decay) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

/// Owns parameters with stable addresses, in registration order.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> init, bool decay = true) {
    if (find(name) != nullptr) {
      throw Error(Errc::invalid_config, "duplicate parameter name " + name);
    }
    params_.push_back(std::make_unique<Parameter<T>>(std::move(name), std::move(init), decay));
    return *params_.back();
  }

  Parameter<T>* find(std::string_view name) const {
    for (const auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  std::vector<Parameter<T>*> all() const {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return params_.size(); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace strider
