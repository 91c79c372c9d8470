#include "dit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <thread>

#include "dit/diffusion.hpp"
#include "dit/errors.hpp"
#include "dit/ops.hpp"

namespace dit {

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double s) {
  if (eps_cond.shape() != eps_uncond.shape()) throw ShapeError("cfg_combine: branch shapes differ");
  if (s == 1.0) return eps_cond;
  return eps_uncond + scale(eps_cond - eps_uncond, s);
}

template <typename T>
Tensor<T> p_sample_step(const DiffusionSchedule& schedule, const Tensor<T>& eps_hat, const Tensor<T>& v,
                        const Tensor<T>& xt, int t, const Tensor<T>& noise, bool clip_x0) {
  schedule.check_step(t);
  const std::vector<int> steps(xt.shape()[0], t);
  auto x0 = predict_x0_from_eps(schedule, xt, steps, eps_hat);
  if (clip_x0) {
    x0 = x0.clone();
    for (auto& val : x0.data()) val = std::clamp(val, T(-1), T(1));
  }
  auto mean = posterior_mean_variance(schedule, x0, xt, steps).mean;
  if (t == 1) return mean;
  if (!noise.defined() || noise.shape() != xt.shape()) throw ShapeError("p_sample_step: noise shape differs from x_t");
  auto logvar = model_log_variance(schedule, v, steps);
  return mean + exp(scale(logvar, 0.5)) * noise;
}

void SampleRequest::validate(const DiTConfig& config, const DiffusionSchedule& schedule) const {
  if (count < 1) throw ConfigError("sample count must be >= 1");
  if (!(guidance_scale >= 1.0)) throw ConfigError("guidance scale must be >= 1");
  if (num_steps < 1 || num_steps > schedule.t_max()) {
    throw ConfigError("num_steps must lie in 1.." + std::to_string(schedule.t_max()));
  }
  if (labels.size() > 1 && labels.size() != static_cast<std::size_t>(count)) {
    throw ConfigError("give one label, one label per sample, or none");
  }
  for (auto l : labels) {
    if (l != kNullLabel && (l < 0 || l >= config.num_classes)) {
      throw IndexError("class label " + std::to_string(l) + " outside 0.." + std::to_string(config.num_classes - 1));
    }
  }
}

std::vector<std::int64_t> SampleRequest::label_for_each() const {
  if (labels.empty()) return std::vector<std::int64_t>(static_cast<std::size_t>(count), kNullLabel);
  if (labels.size() == 1) return std::vector<std::int64_t>(static_cast<std::size_t>(count), labels[0]);
  return labels;
}

namespace {

template <typename T>
Tensor<T> keyed_normal(std::uint64_t seed, Stream stream, std::uint64_t step, std::size_t first, std::size_t n,
                       const Shape& item) {
  const std::size_t per = shape_numel(item);
  std::vector<T> values(n * per);
  for (std::size_t i = 0; i < n; ++i) {
    KeyedRng rng({seed, static_cast<std::uint64_t>(stream), step, first + i});
    for (std::size_t j = 0; j < per; ++j) values[i * per + j] = static_cast<T>(rng.normal());
  }
  Shape shape{n};
  shape.insert(shape.end(), item.begin(), item.end());
  return Tensor<T>(std::move(shape), std::move(values));
}

// Runs the full reverse chain for samples [first, first + n).
template <typename T>
Tensor<T> run_chain(const DenoiseFn<T>& model, const DiTConfig& config, const DiffusionSchedule& steps,
                    const SampleRequest& request, std::span<const std::int64_t> labels, std::size_t first,
                    std::size_t n, std::uint64_t& evaluations) {
  const Shape item{static_cast<std::size_t>(config.input_size), static_cast<std::size_t>(config.input_size),
                   static_cast<std::size_t>(config.channels)};
  const bool guided = request.guidance_scale > 1.0;
  auto x = keyed_normal<T>(request.seed, Stream::kSampleInit, 0, first, n, item);
  std::vector<std::int64_t> branch_labels(labels.begin(), labels.end());
  if (guided) branch_labels.insert(branch_labels.end(), n, kNullLabel);

  for (int t = steps.t_max(); t >= 1; --t) {
    const std::vector<double> model_t(guided ? 2 * n : n, static_cast<double>(steps.timestep(t)));
    ModelOutput<T> out;
    if (guided) {
      const Tensor<T> both[] = {x, x};
      auto raw = model(concat<T>(both, 0), model_t, branch_labels);
      auto eps_c = slice(raw.eps, 0, 0, n), eps_u = slice(raw.eps, 0, n, n);
      out = {cfg_combine(eps_c, eps_u, request.guidance_scale), slice(raw.v, 0, 0, n)};
      evaluations += 2 * n;
    } else {
      out = model(x, model_t, branch_labels);
      evaluations += n;
    }
    Tensor<T> noise;
    if (t > 1) noise = keyed_normal<T>(request.seed, Stream::kSampleStep, static_cast<std::uint64_t>(t), first, n, item);
    x = p_sample_step(steps, out.eps, out.v, x, t, noise, request.clip_x0);
    for (const T val : x.data()) {
      if (!std::isfinite(val)) throw NumericError("non-finite sample at step " + std::to_string(t));
    }
  }
  return x;
}

}  // namespace

template <typename T>
SampleResult<T> sample_with(const DenoiseFn<T>& model, const DiTConfig& config, const DiffusionSchedule& schedule,
                            const SampleRequest& request, const SampleOptions& options) {
  request.validate(config, schedule);
  const auto steps = respace(schedule, request.num_steps).schedule;
  const auto labels = request.label_for_each();
  const std::size_t count = static_cast<std::size_t>(request.count);
  const std::size_t per = static_cast<std::size_t>(config.input_size * config.input_size * config.channels);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, options.batch_size));
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, options.threads)), 1, count);

  std::vector<T> out(count * per);
  std::vector<std::uint64_t> evaluations(workers, 0);
  std::vector<std::exception_ptr> errors(workers);

  auto work = [&](std::size_t w) {
    try {
      NoGradGuard no_grad;
      const std::size_t begin = count * w / workers, end = count * (w + 1) / workers;
      for (std::size_t first = begin; first < end; first += batch) {
        const std::size_t n = std::min(batch, end - first);
        auto x = run_chain(model, config, steps, request, std::span(labels).subspan(first, n), first, n, evaluations[w]);
        std::copy(x.data().begin(), x.data().end(), out.begin() + static_cast<std::ptrdiff_t>(first * per));
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SampleResult<T> result;
  result.samples = Tensor<T>(Shape{count, static_cast<std::size_t>(config.input_size),
                                   static_cast<std::size_t>(config.input_size), static_cast<std::size_t>(config.channels)},
                             std::move(out));
  for (auto e : evaluations) result.stats.model_evaluations += e;
  return result;
}

template <typename T>
SampleResult<T> sample(const ParameterStore<T>& params, const DiTConfig& config, const DiffusionSchedule& schedule,
                       const SampleRequest& request, const SampleOptions& options) {
  DenoiseFn<T> model = [&](const Tensor<T>& x, std::span<const double> t, std::span<const std::int64_t> labels) {
    return forward(config, params, x, t, labels);
  };
  return sample_with(model, config, schedule, request, options);
}

std::vector<std::uint8_t> ppm_preview(const Tensor<float>& batch, std::size_t index) {
  if (batch.rank() != 4 || index >= batch.shape()[0]) throw ShapeError("ppm_preview expects [B, H, W, C] and a valid index");
  const std::size_t h = batch.shape()[1], w = batch.shape()[2], c = batch.shape()[3];
  auto data = batch.data().subspan(index * h * w * c, h * w * c);
  std::vector<float> lo(c, data[0]), hi(c, data[0]);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      lo[ch] = std::min(lo[ch], data[i * c + ch]);
      hi[ch] = std::max(hi[ch], data[i * c + ch]);
    }
  }
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t rgb = 0; rgb < 3; ++rgb) {
      const std::size_t ch = std::min(rgb, c - 1);
      const float range = hi[ch] - lo[ch];
      const float unit = range > 0.0f ? (data[i * c + ch] - lo[ch]) / range : 0.5f;
      out.push_back(static_cast<std::uint8_t>(std::lround(unit * 255.0f)));
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& batch, std::size_t index) {
  const auto bytes = ppm_preview(batch, index);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

#define DIT_INSTANTIATE_SAMPLER(T)                                                                                 \
  template Tensor<T> cfg_combine(const Tensor<T>&, const Tensor<T>&, double);                                      \
  template Tensor<T> p_sample_step(const DiffusionSchedule&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   int, const Tensor<T>&, bool);                                                   \
  template SampleResult<T> sample_with(const DenoiseFn<T>&, const DiTConfig&, const DiffusionSchedule&,            \
                                       const SampleRequest&, const SampleOptions&);                                \
  template SampleResult<T> sample(const ParameterStore<T>&, const DiTConfig&, const DiffusionSchedule&,            \
                                  const SampleRequest&, const SampleOptions&);

DIT_INSTANTIATE_SAMPLER(float)
DIT_INSTANTIATE_SAMPLER(double)

#undef DIT_INSTANTIATE_SAMPLER

}  // namespace dit
