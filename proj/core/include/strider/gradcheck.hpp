#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "strider/autodiff.hpp"

namespace strider {

struct GradCheckOptions {
  double eps = 1e-4;
  // Elements sampled per parameter; parameters at most this large are
  // checked exhaustively.
  int samples_per_param = 24;
  std::uint64_t seed = 1;
  // Denominator floor so that gradients that are zero up to rounding do not
  // produce huge relative errors.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<index>]" of the largest error
  std::int64_t checked = 0;
};

/// Compares backward() against central differences of `loss` with respect to
/// every parameter in `params`. `loss` must rebuild the whole computation on
/// the graph it is given and use Graph::parameter for each parameter.
GradCheckResult grad_check(ParameterSet<double>& params,
                           const std::function<Var<double>(Graph<double>&)>& loss,
                           const GradCheckOptions& opts = {});

}  // namespace strider
