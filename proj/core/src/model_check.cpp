#include "dit/model_check.hpp"

#include "dit/diffusion.hpp"
#include "dit/model.hpp"

namespace dit {

ModelGradCheckReport model_grad_check(const DiTConfig& config, const ModelGradCheckOptions& options) {
  auto params = init_parameters<double>(config, options.seed);
  perturb_parameters(params, options.seed, options.perturbation);
  params.set_requires_grad(true);

  const auto schedule = DiffusionSchedule::standard();
  const std::size_t batch = options.timesteps.size();
  const auto i = static_cast<std::size_t>(config.input_size), c = static_cast<std::size_t>(config.channels);
  KeyedRng rng({options.seed, static_cast<std::uint64_t>(Stream::kFixture), 0xC0FFEEu});
  const auto x0 = Tensor<double>::randn(Shape{batch, i, i, c}, rng);
  const auto eps = Tensor<double>::randn(Shape{batch, i, i, c}, rng);
  std::vector<std::int64_t> labels;
  std::vector<double> t_model;
  for (std::size_t b = 0; b < batch; ++b) {
    labels.push_back(b % 2 == 0 ? static_cast<std::int64_t>(b / 2) % config.num_classes : kNullLabel);
    t_model.push_back(options.timesteps[b]);
  }
  const auto xt = q_sample(schedule, x0, options.timesteps, eps);

  // The VLB mean path is stop-gradient, so the checked function holds it at
  // its value for the unperturbed parameters.
  Tensor<double> frozen_eps;
  {
    NoGradGuard no_grad;
    frozen_eps = forward(config, params, xt, t_model, labels).eps;
  }
  auto loss = [&] {
    auto out = forward(config, params, xt, t_model, labels);
    return hybrid_loss(schedule, out.eps, out.v, eps, x0, xt, options.timesteps, options.vlb_weight, frozen_eps).total;
  };
  auto leaves = params.tensors();
  ModelGradCheckReport out;
  out.report = grad_check(loss, leaves, options.step, options.stencil);
  std::size_t idx = 0;
  for (const auto& [name, _] : params) {
    if (idx++ == out.report.worst_leaf) out.worst_parameter = name;
  }
  return out;
}

}  // namespace dit
