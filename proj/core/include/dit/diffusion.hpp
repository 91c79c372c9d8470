#pragma once

// Forward noising, the true posterior, learned-covariance parameterization
// and the hybrid training objective. Batched tensors are [B, ...] and `t`
// holds one schedule step per sample.

#include <span>
#include <vector>

#include "dit/schedule.hpp"
#include "dit/tensor.hpp"

namespace dit {

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
template <typename T>
Tensor<T> q_sample(const DiffusionSchedule& s, const Tensor<T>& x0, std::span<const int> t, const Tensor<T>& eps);

template <typename T>
struct Posterior {
  Tensor<T> mean;
  std::vector<double> variance;      // beta_tilde_t per sample
  std::vector<double> log_variance;  // clipped at t = 1
};

template <typename T>
Posterior<T> posterior_mean_variance(const DiffusionSchedule& s, const Tensor<T>& x0, const Tensor<T>& xt,
                                     std::span<const int> t);

/// x0_hat = (x_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t)
template <typename T>
Tensor<T> predict_x0_from_eps(const DiffusionSchedule& s, const Tensor<T>& xt, std::span<const int> t,
                              const Tensor<T>& eps_hat);

/// Per-dimension log variance log(Sigma) = f log(beta_t) + (1 - f) log(beta_tilde_t),
/// f = (v + 1) / 2. Differentiable in v.
template <typename T>
Tensor<T> model_log_variance(const DiffusionSchedule& s, const Tensor<T>& v, std::span<const int> t);

/// KL(N(mean1, exp(logvar1)) || N(mean2, exp(logvar2))) summed per sample, in
/// nats. Returns a [B] tensor.
template <typename T>
Tensor<T> gaussian_kl(const Tensor<T>& mean1, const Tensor<T>& logvar1, const Tensor<T>& mean2,
                      const Tensor<T>& logvar2);

/// Gaussian negative log-density of x, summed per sample, in nats.
template <typename T>
Tensor<T> gaussian_nll(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& logvar);

/// Per-sample variational-bound term [B]: KL(q* || p_theta) for t > 1, and
/// the Gaussian negative log-likelihood of x0 for t = 1.
template <typename T>
Tensor<T> vlb_term(const DiffusionSchedule& s, const Tensor<T>& model_mean, const Tensor<T>& model_logvar,
                   const Tensor<T>& x0, const Tensor<T>& xt, std::span<const int> t);

template <typename T>
struct HybridLoss {
  Tensor<T> total;      // scalar, differentiable
  double mse = 0.0;     // L_simple: mean squared error over all elements
  double vlb = 0.0;     // batch mean of vlb_term / elements-per-sample
};

/// L_simple + lambda * L_vlb. The VLB sees a stop-gradient copy of eps_hat,
/// so it only trains the variance channel v. When `vlb_eps_hat` is given the
/// VLB mean is built from it instead; at vlb_eps_hat == eps_hat the value and
/// gradient are unchanged, which lets finite differences hold the blocked
/// path fixed.
template <typename T>
HybridLoss<T> hybrid_loss(const DiffusionSchedule& s, const Tensor<T>& eps_hat, const Tensor<T>& v,
                          const Tensor<T>& eps, const Tensor<T>& x0, const Tensor<T>& xt, std::span<const int> t,
                          double vlb_weight = 1.0, const Tensor<T>& vlb_eps_hat = {});

/// [B, 1, ..., 1] tensor (rank matching `like`) holding one value per sample.
template <typename T>
Tensor<T> per_sample(const Tensor<T>& like, std::span<const double> values);

}  // namespace dit
