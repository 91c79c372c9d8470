#pragma once

// Ancestral DDPM sampling with the learned diagonal covariance and
// classifier-free guidance.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "dit/config.hpp"
#include "dit/model.hpp"
#include "dit/parameters.hpp"
#include "dit/schedule.hpp"

namespace dit {

/// eps_uncond + s * (eps_cond - eps_uncond); s = 1 returns eps_cond exactly.
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double s);

/// One reverse step from schedule step t (1-based within `schedule`) to t-1.
/// Mean: posterior mean at x0_hat recovered from eps_hat. Variance: the
/// learned interpolation. No noise is added at t = 1, and `noise` may be
/// undefined there.
template <typename T>
Tensor<T> p_sample_step(const DiffusionSchedule& schedule, const Tensor<T>& eps_hat, const Tensor<T>& v,
                        const Tensor<T>& xt, int t, const Tensor<T>& noise, bool clip_x0 = false);

struct SampleRequest {
  int count = 1;
  /// One label for every sample, one per sample, or empty for unconditional
  /// (null-label) sampling.
  std::vector<std::int64_t> labels;
  double guidance_scale = 1.0;  // s >= 1; s == 1 skips the null branch
  int num_steps = 250;
  std::uint64_t seed = 0;
  bool clip_x0 = false;

  void validate(const DiTConfig& config, const DiffusionSchedule& schedule) const;
  std::vector<std::int64_t> label_for_each() const;
};

struct SampleOptions {
  int threads = 1;         // samples are split into contiguous per-thread ranges
  int batch_size = 256;    // rows per network call (before guidance doubling)
};

struct SampleStats {
  /// Network evaluations summed over images (a guided step costs two).
  std::uint64_t model_evaluations = 0;
};

template <typename T>
struct SampleResult {
  Tensor<T> samples;  // [count, I, I, C]
  SampleStats stats;
};

/// Network stand-in: (x [B, I, I, C], timesteps, labels) -> (eps, v).
template <typename T>
using DenoiseFn = std::function<ModelOutput<T>(const Tensor<T>&, std::span<const double>, std::span<const std::int64_t>)>;

/// Generic sampling loop over an arbitrary denoiser; the base schedule is
/// respaced to request.num_steps. Output bits depend only on (request, model),
/// never on options.
template <typename T>
SampleResult<T> sample_with(const DenoiseFn<T>& model, const DiTConfig& config, const DiffusionSchedule& schedule,
                            const SampleRequest& request, const SampleOptions& options = {});

template <typename T>
SampleResult<T> sample(const ParameterStore<T>& params, const DiTConfig& config, const DiffusionSchedule& schedule,
                       const SampleRequest& request, const SampleOptions& options = {});

/// Binary PPM (P6) of sample `index`: channels 0..2 mapped to RGB (missing
/// channels repeat the last one), each min/max normalized independently.
std::vector<std::uint8_t> ppm_preview(const Tensor<float>& batch, std::size_t index);
void write_ppm(const std::filesystem::path& path, const Tensor<float>& batch, std::size_t index);

}  // namespace dit
