#include "dit/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "dit/errors.hpp"

namespace dit {

DiffusionSchedule DiffusionSchedule::linear(int t_max, double beta_start, double beta_end) {
  if (t_max < 1) throw ConfigError("t_max must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("linear schedule needs 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(t_max));
  for (int i = 0; i < t_max; ++i) {
    betas[static_cast<std::size_t>(i)] =
        t_max == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / static_cast<double>(t_max - 1);
  }
  std::vector<double> alpha_bar(betas.size());
  double acc = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    acc *= 1.0 - betas[i];
    alpha_bar[i] = acc;
  }
  std::vector<int> steps(betas.size());
  for (int i = 0; i < t_max; ++i) steps[static_cast<std::size_t>(i)] = i + 1;
  return from_alpha_bar(std::move(alpha_bar), std::move(betas), std::move(steps));
}

DiffusionSchedule DiffusionSchedule::standard() { return linear(1000, 1e-4, 2e-2); }

DiffusionSchedule DiffusionSchedule::from_alpha_bar(std::vector<double> alpha_bar, std::vector<double> betas,
                                                    std::vector<int> timesteps) {
  if (alpha_bar.empty()) throw ConfigError("schedule needs at least one step");
  if (timesteps.size() != alpha_bar.size()) throw ConfigError("timestep map length mismatch");
  DiffusionSchedule s;
  s.alpha_bar_.assign(1, 1.0);
  s.alpha_bar_.insert(s.alpha_bar_.end(), alpha_bar.begin(), alpha_bar.end());
  s.beta_.assign(1, 0.0);
  if (betas.empty()) {
    for (std::size_t t = 1; t < s.alpha_bar_.size(); ++t) s.beta_.push_back(1.0 - s.alpha_bar_[t] / s.alpha_bar_[t - 1]);
  } else {
    if (betas.size() != alpha_bar.size()) throw ConfigError("beta/alpha_bar length mismatch");
    s.beta_.insert(s.beta_.end(), betas.begin(), betas.end());
  }
  s.timesteps_ = std::move(timesteps);
  s.populate();
  return s;
}

void DiffusionSchedule::populate() {
  const std::size_t n = beta_.size();
  for (std::size_t t = 1; t < n; ++t) {
    if (!(beta_[t] > 0.0 && beta_[t] < 1.0)) throw ConfigError("beta_t must lie in (0, 1)");
  }
  posterior_variance_.assign(n, 0.0);
  log_beta_.assign(n, 0.0);
  log_posterior_variance_.assign(n, 0.0);
  coef_x0_.assign(n, 0.0);
  coef_xt_.assign(n, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    const double ab = alpha_bar_[t], ab_prev = alpha_bar_[t - 1];
    posterior_variance_[t] = beta_[t] * (1.0 - ab_prev) / (1.0 - ab);
    log_beta_[t] = std::log(beta_[t]);
    coef_x0_[t] = beta_[t] * std::sqrt(ab_prev) / (1.0 - ab);
    coef_xt_[t] = (1.0 - ab_prev) * std::sqrt(1.0 - beta_[t]) / (1.0 - ab);
  }
  // alpha_bar_0 = 1: the first posterior is exactly x0, without the
  // cancellation in 1 - alpha_bar_1.
  coef_x0_[1] = 1.0;
  coef_xt_[1] = 0.0;
  for (std::size_t t = 1; t < n; ++t) {
    double v = posterior_variance_[t];
    if (t == 1) v = n > 2 ? posterior_variance_[2] : beta_[1];
    log_posterior_variance_[t] = std::log(v);
  }
}

void DiffusionSchedule::check_step(int t) const {
  if (t < 1 || t > t_max()) {
    throw IndexError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(t_max()));
  }
}

double DiffusionSchedule::beta(int t) const {
  check_step(t);
  return beta_[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_step(t);
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }

double DiffusionSchedule::sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

double DiffusionSchedule::posterior_variance(int t) const {
  check_step(t);
  return posterior_variance_[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::log_beta(int t) const {
  check_step(t);
  return log_beta_[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::log_posterior_variance(int t) const {
  check_step(t);
  return log_posterior_variance_[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::posterior_coef_x0(int t) const {
  check_step(t);
  return coef_x0_[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::posterior_coef_xt(int t) const {
  check_step(t);
  return coef_xt_[static_cast<std::size_t>(t)];
}

int DiffusionSchedule::timestep(int t) const {
  check_step(t);
  return timesteps_[static_cast<std::size_t>(t - 1)];
}

RespacedSchedule respace(const DiffusionSchedule& base, int num_steps) {
  const int t_max = base.t_max();
  if (num_steps < 1 || num_steps > t_max) {
    throw ConfigError("respacing to " + std::to_string(num_steps) + " steps; allowed range is 1.." +
                      std::to_string(t_max));
  }
  std::vector<int> kept;
  if (num_steps == 1) {
    kept.push_back(t_max);
  } else {
    for (int i = 0; i < num_steps; ++i) {
      const double pos = 1.0 + static_cast<double>(i) * (t_max - 1) / static_cast<double>(num_steps - 1);
      kept.push_back(static_cast<int>(std::lround(pos)));
    }
  }
  std::vector<double> alpha_bar, betas;
  std::vector<int> timesteps;
  int prev = 0;
  for (int k : kept) {
    alpha_bar.push_back(base.alpha_bar(k));
    // Adjacent kept steps keep the original beta bit-for-bit.
    betas.push_back(k == prev + 1 ? base.beta(k) : 1.0 - base.alpha_bar(k) / base.alpha_bar(prev));
    timesteps.push_back(base.timestep(k));
    prev = k;
  }
  auto schedule = DiffusionSchedule::from_alpha_bar(std::move(alpha_bar), std::move(betas), std::move(timesteps));
  return {std::move(kept), std::move(schedule)};
}

std::string schedule_csv(const DiffusionSchedule& schedule) {
  std::ostringstream os;
  os << "t,beta,alpha_bar,posterior_variance\n";
  char line[160];
  for (int t = 1; t <= schedule.t_max(); ++t) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", schedule.timestep(t), schedule.beta(t),
                  schedule.alpha_bar(t), schedule.posterior_variance(t));
    os << line;
  }
  return os.str();
}

}  // namespace dit
