#include "dit/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dit/analysis.hpp"
#include "dit/errors.hpp"
#include "dit/tensor_io.hpp"
#include "dit/trainer.hpp"

namespace dit {

namespace {

std::vector<double> projection(std::size_t in_dim, std::uint64_t seed) {
  KeyedRng rng({seed, static_cast<std::uint64_t>(Stream::kExtractor), in_dim});
  std::vector<double> w(in_dim * kFeatureDim);
  const double s = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (auto& x : w) x = s * rng.normal();
  return w;
}

FeatureMatrix project(std::size_t rows, std::size_t in_dim, std::uint64_t seed, auto value) {
  if (rows == 0 || in_dim == 0) throw ShapeError("feature extraction needs a non-empty batch");
  const auto w = projection(in_dim, seed);
  FeatureMatrix f{rows, kFeatureDim, std::vector<double>(rows * kFeatureDim, 0.0)};
  for (std::size_t r = 0; r < rows; ++r) {
    double* out = f.data.data() + r * kFeatureDim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double x = value(r, i);
      const double* wi = w.data() + i * kFeatureDim;
      for (std::size_t j = 0; j < kFeatureDim; ++j) out[j] += x * wi[j];
    }
    for (std::size_t j = 0; j < kFeatureDim; ++j) out[j] = std::tanh(out[j]);
  }
  return f;
}

Eigen::MatrixXd regularized(const FeatureStats& s, double eps) {
  const auto n = static_cast<Eigen::Index>(s.dim());
  Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(s.cov.data(), n, n);
  m = 0.5 * (m + m.transpose()).eval();
  m.diagonal().array() += eps;
  return m;
}

std::string stats_key(const ToyDataset& d, std::uint64_t extractor_seed, std::size_t count) {
  std::ostringstream os;
  os << "reference_stats_K" << d.num_classes() << "_I" << d.input_size() << "_C" << d.channels() << "_data"
     << d.seed() << "_extractor" << extractor_seed << "_n" << count << ".ditt";
  return os.str();
}

}  // namespace

FeatureMatrix extract_features(const Tensor<float>& batch, std::uint64_t extractor_seed) {
  if (batch.rank() < 2) throw ShapeError("feature extraction expects [N, ...], got " + shape_str(batch.shape()));
  const std::size_t rows = batch.shape()[0], in = batch.numel() / rows;
  auto d = batch.data();
  return project(rows, in, extractor_seed, [&](std::size_t r, std::size_t i) { return static_cast<double>(d[r * in + i]); });
}

FeatureMatrix extract_features(std::span<const std::vector<double>> items, std::uint64_t extractor_seed) {
  if (items.empty()) throw ShapeError("feature extraction needs a non-empty batch");
  const std::size_t in = items[0].size();
  for (const auto& it : items) {
    if (it.size() != in) throw ShapeError("feature extraction items differ in size");
  }
  return project(items.size(), in, extractor_seed, [&](std::size_t r, std::size_t i) { return items[r][i]; });
}

FeatureStats gaussian_stats(const FeatureMatrix& f) {
  if (f.rows < 2) throw ContractError("gaussian_stats needs at least two samples");
  if (f.data.size() != f.rows * f.cols) throw ShapeError("feature matrix size mismatch");
  const std::size_t n = f.rows, k = f.cols;
  FeatureStats s;
  s.count = n;
  s.mean.assign(k, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) s.mean[j] += f.at(r, j);
  }
  for (auto& m : s.mean) m /= static_cast<double>(n);
  s.cov.assign(k * k, 0.0);
  std::vector<double> centred(k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) centred[j] = f.at(r, j) - s.mean[j];
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a; b < k; ++b) s.cov[a * k + b] += centred[a] * centred[b];
    }
  }
  const double denom = static_cast<double>(n - 1);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a; b < k; ++b) {
      s.cov[a * k + b] /= denom;
      s.cov[b * k + a] = s.cov[a * k + b];
    }
  }
  return s;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b, double eps, FrechetDiagnostics* diagnostics) {
  if (a.dim() != b.dim() || a.cov.size() != a.dim() * a.dim() || b.cov.size() != b.dim() * b.dim()) {
    throw ContractError("frechet_distance: statistics have different dimensions");
  }
  if (a.dim() == 0) throw ContractError("frechet_distance: empty statistics");
  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

  const Eigen::MatrixXd ca = regularized(a, eps), cb = regularized(b, eps);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(ca);
  const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sqrt_a * cb * sqrt_a;
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd lambda = em.eigenvalues();
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) trace_sqrt += std::sqrt(std::max(lambda[i], 0.0));
  if (diagnostics) {
    diagnostics->min_eigenvalue = lambda.minCoeff();
    diagnostics->clipped_significant = lambda.minCoeff() < -1e-6 * std::max(1.0, lambda.maxCoeff());
  }
  const double d = mean_term + ca.trace() + cb.trace() - 2.0 * trace_sqrt;
  return std::max(d, 0.0);
}

std::filesystem::path reference_stats_path(const std::filesystem::path& cache_dir, const ToyDataset& dataset,
                                           std::uint64_t extractor_seed, std::size_t count) {
  return cache_dir / stats_key(dataset, extractor_seed, count);
}

void save_stats(const std::filesystem::path& path, const FeatureStats& stats, std::uint64_t extractor_seed) {
  TensorArchive ar;
  nlohmann::json meta{{"format", "dit-feature-stats"}, {"extractor_seed", extractor_seed}, {"count", stats.count}};
  ar.metadata = meta.dump();
  const std::size_t k = stats.dim();
  ar.put_f64("mu", Shape{k}, stats.mean);
  ar.put_f64("sigma", Shape{k, k}, stats.cov);
  const std::int64_t counts[] = {static_cast<std::int64_t>(stats.count), static_cast<std::int64_t>(extractor_seed)};
  ar.put_i64("count_seed", Shape{2}, counts);
  ar.save(path);
}

FeatureStats load_stats(const std::filesystem::path& path) {
  const auto ar = TensorArchive::load(path);
  FeatureStats s;
  s.mean = ar.get_f64("mu");
  s.cov = ar.get_f64("sigma");
  s.count = static_cast<std::uint64_t>(ar.get_i64("count_seed").at(0));
  if (s.cov.size() != s.mean.size() * s.mean.size()) throw FormatError("stats file has inconsistent shapes");
  return s;
}

FeatureStats reference_stats(const ToyDataset& dataset, std::uint64_t extractor_seed, std::size_t count,
                             const std::filesystem::path& cache_dir) {
  std::filesystem::path path;
  if (!cache_dir.empty()) {
    path = reference_stats_path(cache_dir, dataset, extractor_seed, count);
    if (std::filesystem::exists(path)) return load_stats(path);
  }
  std::vector<std::vector<double>> items;
  items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto item = dataset.get(i);
    items.emplace_back(item.latent.begin(), item.latent.end());
  }
  auto stats = gaussian_stats(extract_features(items, extractor_seed));
  if (!path.empty()) {
    std::filesystem::create_directories(cache_dir);
    save_stats(path, stats, extractor_seed);
  }
  return stats;
}

double sample_metric(const Tensor<float>& samples, const FeatureStats& reference, std::uint64_t extractor_seed) {
  return frechet_distance(gaussian_stats(extract_features(samples, extractor_seed)), reference);
}

std::vector<SweepRecord> scaling_sweep(const std::vector<SweepPoint>& points, const EvalProtocol& protocol) {
  if (protocol.sample_count < 2) throw ConfigError("sweep needs at least two samples per record");
  std::vector<SweepRecord> records;
  std::map<std::string, FeatureStats> reference_cache;
  for (const auto& point : points) {
    std::optional<TrainState> state;
    std::string failure;
    try {
      if (!std::filesystem::exists(point.checkpoint)) throw FormatError("checkpoint not found: " + point.checkpoint.string());
      state = load_checkpoint(point.checkpoint);
    } catch (const std::exception& e) {
      failure = e.what();
    }
    for (int steps : protocol.step_counts) {
      SweepRecord r;
      r.model = point.name;
      r.sampling_steps = steps;
      if (!state) {
        r.skipped = true;
        r.metric = std::nan("");
        r.note = failure;
        records.push_back(std::move(r));
        continue;
      }
      const auto& cfg = state->model;
      r.variant = std::string(variant_name(cfg.variant));
      r.patch = cfg.patch;
      r.training_step = state->step;
      const double gflops = count_flops(cfg).gflops();
      r.sample_tflops = sampling_compute(gflops, static_cast<std::uint64_t>(steps), protocol.guidance_scale > 1.0);
      r.training_gflops = training_compute(gflops, static_cast<std::uint64_t>(state->train.batch_size),
                                           static_cast<std::uint64_t>(state->step));

      const auto dataset = make_dataset(cfg, state->train);
      const auto key = stats_key(dataset, protocol.extractor_seed, protocol.reference_count);
      auto it = reference_cache.find(key);
      if (it == reference_cache.end()) {
        it = reference_cache
                 .emplace(key, reference_stats(dataset, protocol.extractor_seed, protocol.reference_count, protocol.cache_dir))
                 .first;
      }
      SampleRequest req;
      req.count = static_cast<int>(protocol.sample_count);
      for (std::size_t i = 0; i < protocol.sample_count; ++i) req.labels.push_back(static_cast<std::int64_t>(i % static_cast<std::size_t>(cfg.num_classes)));
      req.guidance_scale = protocol.guidance_scale;
      req.num_steps = steps;
      req.seed = protocol.sample_seed;
      try {
        const auto& weights = protocol.use_ema ? state->ema : state->params;
        const auto out = sample(weights, cfg, state->train.schedule(), req, protocol.sampling);
        r.metric = sample_metric(out.samples, it->second, protocol.extractor_seed);
      } catch (const std::exception& e) {
        r.skipped = true;
        r.metric = std::nan("");
        r.note = e.what();
      }
      records.push_back(std::move(r));
    }
  }
  return records;
}

std::string sweep_csv(const std::vector<SweepRecord>& records) {
  std::ostringstream os;
  os << "model,variant,patch,sampling_steps,training_step,metric,sample_tflops,training_gflops,status,note\n";
  char buf[256];
  for (const auto& r : records) {
    std::string note = r.note;
    std::replace(note.begin(), note.end(), ',', ';');
    std::replace(note.begin(), note.end(), '\n', ' ');
    std::snprintf(buf, sizeof buf, "%d,%d,%lld,%.10g,%.10g,%.10g", r.patch, r.sampling_steps,
                  static_cast<long long>(r.training_step), r.metric, r.sample_tflops, r.training_gflops);
    os << r.model << ',' << r.variant << ',' << buf << ',' << (r.skipped ? "skipped" : "ok") << ',' << note << '\n';
  }
  return os.str();
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << sweep_csv(records);
}

}  // namespace dit
