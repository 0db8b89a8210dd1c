#include "strider/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "strider/rng.hpp"

namespace strider {

GradCheckResult grad_check(ParameterSet<double>& params,
                           const std::function<Var<double>(Graph<double>&)>& loss,
                           const GradCheckOptions& opts) {
  params.zero_grad();
  {
    Graph<double> g;
    g.set_check_finite(true);
    g.backward(loss(g));
  }
  auto eval = [&loss] {
    Graph<double> g(false);
    return loss(g).value().item();
  };

  GradCheckResult result;
  auto rng = make_rng(opts.seed, "gradcheck");
  for (auto* p : params.all()) {
    const auto n = static_cast<std::size_t>(p->value.numel());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n > static_cast<std::size_t>(opts.samples_per_param)) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(opts.samples_per_param));
    }
    for (auto i : idx) {
      const double orig = p->value.data[i];
      p->value.data[i] = orig + opts.eps;
      const double up = eval();
      p->value.data[i] = orig - opts.eps;
      const double down = eval();
      p->value.data[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double analytic = p->grad.data[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), opts.floor});
      const double err = std::abs(numeric - analytic) / denom;
      ++result.checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = err;
        result.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace strider
