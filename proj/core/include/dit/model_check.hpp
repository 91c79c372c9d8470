#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dit/config.hpp"
#include "dit/grad_check.hpp"

namespace dit {

struct ModelGradCheckOptions {
  std::uint64_t seed = 0;
  /// One sample per entry; t = 1 exercises the decoder term, t > 1 the KL.
  std::vector<int> timesteps{1, 500};
  /// Added to every initial parameter so zero-initialized layers carry gradient.
  double perturbation = 0.1;
  double step = 4e-3;
  Stencil stencil = Stencil::kFourPoint;
  double vlb_weight = 1.0;
};

struct ModelGradCheckReport {
  GradCheckReport report;
  std::string worst_parameter;
};

/// Finite-difference check of forward + hybrid loss over every parameter of
/// `config`, in double precision. Labels alternate real classes and the null label.
ModelGradCheckReport model_grad_check(const DiTConfig& config, const ModelGradCheckOptions& options = {});

}  // namespace dit
