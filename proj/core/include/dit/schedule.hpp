#pragma once

#include <string>
#include <vector>

namespace dit {

/// Time-indexed forward-process constants for steps t = 1..t_max.
///
/// All quantities are held in double precision. alpha_bar(0) is 1 by
/// convention, which makes the t = 1 posterior collapse onto x0. A respaced
/// schedule is also a DiffusionSchedule: its steps are numbered 1..n and
/// timestep(t) maps each back to the original step fed to the network.
class DiffusionSchedule {
 public:
  /// beta linearly interpolated from beta_start (t=1) to beta_end (t=t_max).
  static DiffusionSchedule linear(int t_max, double beta_start, double beta_end);
  /// 1000 steps, beta from 1e-4 to 2e-2.
  static DiffusionSchedule standard();

  int t_max() const { return static_cast<int>(beta_.size()) - 1; }

  double beta(int t) const;
  double alpha_bar(int t) const;  // t in 0..t_max
  double sqrt_alpha_bar(int t) const;
  double sqrt_one_minus_alpha_bar(int t) const;
  /// beta_tilde_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t); zero at t = 1.
  double posterior_variance(int t) const;
  double log_beta(int t) const;
  /// log beta_tilde_t with the t = 1 entry replaced by t = 2 (beta_tilde_1 = 0).
  double log_posterior_variance(int t) const;
  /// mu_tilde = coef_x0 * x0 + coef_xt * xt
  double posterior_coef_x0(int t) const;
  double posterior_coef_xt(int t) const;

  /// Original timestep that step t corresponds to (identity unless respaced).
  int timestep(int t) const;
  const std::vector<int>& timesteps() const { return timesteps_; }

  /// Throws IndexError unless 1 <= t <= t_max.
  void check_step(int t) const;

  /// Builds a schedule from cumulative products; beta_t is derived as
  /// 1 - alpha_bar_t / alpha_bar_{t-1} unless `betas` is given.
  static DiffusionSchedule from_alpha_bar(std::vector<double> alpha_bar, std::vector<double> betas,
                                          std::vector<int> timesteps);

 private:
  DiffusionSchedule() = default;
  void populate();

  // Index 0 is a placeholder for t = 0 (alpha_bar_0 = 1).
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> posterior_variance_;
  std::vector<double> log_beta_;
  std::vector<double> log_posterior_variance_;
  std::vector<double> coef_x0_;
  std::vector<double> coef_xt_;
  std::vector<int> timesteps_;  // 1-based; timesteps_[t - 1]
};

struct RespacedSchedule {
  std::vector<int> kept;  // strictly increasing subset of 1..t_max
  DiffusionSchedule schedule;
};

/// Keeps `num_steps` evenly spaced steps, always including 1 and t_max
/// (a single kept step is t_max). alpha_bar is copied exactly at kept steps
/// and beta is re-derived from consecutive ratios.
RespacedSchedule respace(const DiffusionSchedule& base, int num_steps);

/// CSV with header "t,beta,alpha_bar,posterior_variance".
std::string schedule_csv(const DiffusionSchedule& schedule);

}  // namespace dit
