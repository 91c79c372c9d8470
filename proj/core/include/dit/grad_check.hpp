#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "dit/tensor.hpp"

namespace dit {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Worst coordinate: leaf index, flat offset, and both derivative estimates.
  std::size_t worst_leaf = 0;
  std::size_t worst_offset = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central-difference stencil. kFourPoint combines +-h and +-2h so the
/// truncation error is O(h^4) instead of O(h^2).
enum class Stencil { kTwoPoint, kFourPoint };

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate:
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
/// `loss` is re-evaluated with each leaf coordinate nudged by +-step in place;
/// a kink within one step of a coordinate (e.g. abs near 0) shows up as a
/// large error, which is expected.
/// leaves are restored afterwards. Leaves must require grad.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss, std::span<Tensor<double>> leaves,
                           double step = 1e-6, Stencil stencil = Stencil::kTwoPoint);

/// Single-argument convenience form: f is evaluated at `point`.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& point,
                  double step = 1e-6);

}  // namespace dit
