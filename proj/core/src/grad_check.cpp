#include "dit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dit/errors.hpp"

namespace dit {

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss, std::span<Tensor<double>> leaves,
                           double step, Stencil stencil) {
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw ContractError("grad_check leaves must require grad");
    leaf.zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    if (leaf.has_grad()) {
      auto g = leaf.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(leaf.numel(), 0.0);
    }
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return loss().item();
      };
      double numeric = (at(step) - at(-step)) / (2.0 * step);
      if (stencil == Stencil::kFourPoint) {
        const double wide = (at(2.0 * step) - at(-2.0 * step)) / (4.0 * step);
        numeric = (4.0 * numeric - wide) / 3.0;
      }
      values[i] = saved;
      const double a = analytic[li][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = rel;
        report.worst_leaf = li;
        report.worst_offset = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& point,
                  double step) {
  Tensor<double> x = point.clone();
  x.set_requires_grad(true);
  Tensor<double> leaves[] = {x};
  return grad_check([&] { return f(leaves[0]); }, leaves, step).max_rel_error;
}

}  // namespace dit
