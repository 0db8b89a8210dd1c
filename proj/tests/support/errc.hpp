#pragma once

#include <functional>
#include <optional>

#include "strider/error.hpp"

namespace strider::testing {

// Code of the strider::Error thrown by f, or nullopt if nothing was thrown.
inline std::optional<Errc> thrown_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace strider::testing

#define CHECK_ERRC(expr, errc) \
  CHECK(::strider::testing::thrown_code([&] { (void)(expr); }) == std::optional(errc))
