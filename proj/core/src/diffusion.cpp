#include "dit/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "dit/errors.hpp"
#include "dit/ops.hpp"

namespace dit {

namespace {

template <typename T>
void check_batch(const Tensor<T>& x, std::span<const int> t, const DiffusionSchedule& s) {
  if (x.rank() < 1 || x.shape()[0] != t.size()) {
    throw ShapeError("batch of " + shape_str(x.shape()) + " does not match " + std::to_string(t.size()) + " timesteps");
  }
  for (int ti : t) s.check_step(ti);
}

template <typename T, typename F>
Tensor<T> coef(const Tensor<T>& like, std::span<const int> t, F f) {
  std::vector<double> values;
  values.reserve(t.size());
  for (int ti : t) values.push_back(f(ti));
  return per_sample(like, values);
}

}  // namespace

template <typename T>
Tensor<T> per_sample(const Tensor<T>& like, std::span<const double> values) {
  Shape shape(like.rank(), 1);
  shape[0] = values.size();
  return Tensor<T>(shape, std::vector<T>(values.begin(), values.end()));
}

template <typename T>
Tensor<T> q_sample(const DiffusionSchedule& s, const Tensor<T>& x0, std::span<const int> t, const Tensor<T>& eps) {
  check_batch(x0, t, s);
  if (x0.shape() != eps.shape()) throw ShapeError("q_sample: eps shape differs from x0");
  auto a = coef(x0, t, [&](int ti) { return s.sqrt_alpha_bar(ti); });
  auto b = coef(x0, t, [&](int ti) { return s.sqrt_one_minus_alpha_bar(ti); });
  return a * x0 + b * eps;
}

template <typename T>
Posterior<T> posterior_mean_variance(const DiffusionSchedule& s, const Tensor<T>& x0, const Tensor<T>& xt,
                                     std::span<const int> t) {
  check_batch(x0, t, s);
  if (x0.shape() != xt.shape()) throw ShapeError("posterior: x0 and xt shapes differ");
  Posterior<T> p;
  auto c0 = coef(x0, t, [&](int ti) { return s.posterior_coef_x0(ti); });
  auto ct = coef(x0, t, [&](int ti) { return s.posterior_coef_xt(ti); });
  p.mean = c0 * x0 + ct * xt;
  for (int ti : t) {
    p.variance.push_back(s.posterior_variance(ti));
    p.log_variance.push_back(s.log_posterior_variance(ti));
  }
  return p;
}

template <typename T>
Tensor<T> predict_x0_from_eps(const DiffusionSchedule& s, const Tensor<T>& xt, std::span<const int> t,
                              const Tensor<T>& eps_hat) {
  check_batch(xt, t, s);
  if (xt.shape() != eps_hat.shape()) throw ShapeError("predict_x0: eps shape differs from x_t");
  auto inv = coef(xt, t, [&](int ti) { return 1.0 / s.sqrt_alpha_bar(ti); });
  auto ratio = coef(xt, t, [&](int ti) { return s.sqrt_one_minus_alpha_bar(ti) / s.sqrt_alpha_bar(ti); });
  return inv * xt - ratio * eps_hat;
}

template <typename T>
Tensor<T> model_log_variance(const DiffusionSchedule& s, const Tensor<T>& v, std::span<const int> t) {
  check_batch(v, t, s);
  auto max_log = coef(v, t, [&](int ti) { return s.log_beta(ti); });
  auto min_log = coef(v, t, [&](int ti) { return s.log_posterior_variance(ti); });
  auto frac = scale(add_scalar(v, 1.0), 0.5);
  // f * max + (1 - f) * min == min + f * (max - min)
  return min_log + frac * (max_log - min_log);
}

namespace {

template <typename T>
Tensor<T> sum_per_sample(const Tensor<T>& x) {
  const std::size_t b = x.shape()[0];
  return sum_axis(reshape(x, Shape{b, x.numel() / b}), 1);
}

}  // namespace

template <typename T>
Tensor<T> gaussian_kl(const Tensor<T>& mean1, const Tensor<T>& logvar1, const Tensor<T>& mean2,
                      const Tensor<T>& logvar2) {
  if (mean1.shape() != mean2.shape()) throw ShapeError("gaussian_kl: mean shapes differ");
  const Shape& shape = mean1.shape();
  // logvars may broadcast (e.g. per-sample scalars) against the means.
  auto full = [&](const Tensor<T>& x) { return x.shape() == shape ? x : add(x, Tensor<T>(shape)); };
  auto lv1 = full(logvar1), lv2 = full(logvar2);
  auto diff = mean1 - mean2;
  auto kl = scale(add_scalar(lv2 - lv1 + exp(lv1 - lv2) + square(diff) * exp(scale(lv2, -1.0)), -1.0), 0.5);
  return sum_per_sample(kl);
}

template <typename T>
Tensor<T> gaussian_nll(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& logvar) {
  if (x.shape() != mean.shape()) throw ShapeError("gaussian_nll: shapes differ");
  const double log_two_pi = std::log(2.0 * std::numbers::pi);
  auto lv = logvar.shape() == x.shape() ? logvar : add(logvar, Tensor<T>(x.shape()));
  auto nll = scale(add_scalar(lv + square(x - mean) * exp(scale(lv, -1.0)), log_two_pi), 0.5);
  return sum_per_sample(nll);
}

template <typename T>
Tensor<T> vlb_term(const DiffusionSchedule& s, const Tensor<T>& model_mean, const Tensor<T>& model_logvar,
                   const Tensor<T>& x0, const Tensor<T>& xt, std::span<const int> t) {
  auto post = posterior_mean_variance(s, x0, xt, t);
  auto true_logvar = per_sample(x0, post.log_variance);
  auto kl = gaussian_kl(post.mean, true_logvar, model_mean, model_logvar);
  auto nll = gaussian_nll(x0, model_mean, model_logvar);
  std::vector<T> is_first(t.size()), is_later(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    is_first[i] = t[i] == 1 ? T{1} : T{0};
    is_later[i] = t[i] == 1 ? T{0} : T{1};
  }
  const Shape b{t.size()};
  return kl * Tensor<T>(b, std::move(is_later)) + nll * Tensor<T>(b, std::move(is_first));
}

template <typename T>
HybridLoss<T> hybrid_loss(const DiffusionSchedule& s, const Tensor<T>& eps_hat, const Tensor<T>& v,
                          const Tensor<T>& eps, const Tensor<T>& x0, const Tensor<T>& xt, std::span<const int> t,
                          double vlb_weight, const Tensor<T>& vlb_eps_hat) {
  if (vlb_eps_hat.defined() && vlb_eps_hat.shape() != eps_hat.shape()) {
    throw ShapeError("hybrid_loss: vlb_eps_hat must match eps_hat");
  }
  if (eps_hat.shape() != eps.shape() || v.shape() != eps.shape() || x0.shape() != eps.shape() ||
      xt.shape() != eps.shape()) {
    throw ShapeError("hybrid_loss: eps_hat, v, eps, x0 and xt must share one shape");
  }
  HybridLoss<T> out;
  auto mse = mean(square(eps_hat - eps));

  // Mean path is frozen: the VLB only trains Sigma.
  auto x0_hat = predict_x0_from_eps(s, xt, t, (vlb_eps_hat.defined() ? vlb_eps_hat : eps_hat).detach());
  auto model_mean = posterior_mean_variance(s, x0_hat, xt, t).mean.detach();
  auto logvar = model_log_variance(s, v, t);
  auto vlb = vlb_term(s, model_mean, logvar, x0, xt, t);
  const double per_sample_dims = static_cast<double>(eps.numel() / eps.shape()[0]);
  auto vlb_mean = scale(mean(vlb), 1.0 / per_sample_dims);

  out.total = add(mse, scale(vlb_mean, vlb_weight));
  out.mse = mse.item();
  out.vlb = vlb_mean.item();
  return out;
}

#define DIT_INSTANTIATE_DIFFUSION(T)                                                                               \
  template Tensor<T> per_sample(const Tensor<T>&, std::span<const double>);                                        \
  template Tensor<T> q_sample(const DiffusionSchedule&, const Tensor<T>&, std::span<const int>, const Tensor<T>&); \
  template Posterior<T> posterior_mean_variance(const DiffusionSchedule&, const Tensor<T>&, const Tensor<T>&,      \
                                                std::span<const int>);                                             \
  template Tensor<T> predict_x0_from_eps(const DiffusionSchedule&, const Tensor<T>&, std::span<const int>,         \
                                         const Tensor<T>&);                                                        \
  template Tensor<T> model_log_variance(const DiffusionSchedule&, const Tensor<T>&, std::span<const int>);         \
  template Tensor<T> gaussian_kl(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> gaussian_nll(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> vlb_term(const DiffusionSchedule&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                              const Tensor<T>&, std::span<const int>);                                             \
  template HybridLoss<T> hybrid_loss(const DiffusionSchedule&, const Tensor<T>&, const Tensor<T>&,                 \
                                     const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const int>,   \
                                     double, const Tensor<T>&);

DIT_INSTANTIATE_DIFFUSION(float)
DIT_INSTANTIATE_DIFFUSION(double)

#undef DIT_INSTANTIATE_DIFFUSION

}  // namespace dit
