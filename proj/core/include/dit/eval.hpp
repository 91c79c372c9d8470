#pragma once

// Toy sample-quality metric: Fréchet distance between Gaussian fits of
// features from a frozen random projection. The extractor is a fixed seeded
// map, not a perceptual network, so the numbers are not comparable to FID.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dit/config.hpp"
#include "dit/dataset.hpp"
#include "dit/sampler.hpp"
#include "dit/tensor.hpp"

namespace dit {

inline constexpr std::size_t kFeatureDim = 64;

/// Row-major [rows, cols] matrix of doubles.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// flatten -> x W / sqrt(n_in) -> tanh, W ~ N(0, 1) drawn from the extractor seed.
FeatureMatrix extract_features(const Tensor<float>& batch, std::uint64_t extractor_seed);
FeatureMatrix extract_features(std::span<const std::vector<double>> items, std::uint64_t extractor_seed);

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim, row-major
  std::uint64_t count = 0;

  std::size_t dim() const { return mean.size(); }
  /// Fewer samples than dimensions: the covariance is rank deficient.
  bool underdetermined() const { return count < dim(); }
};

/// Sample mean and unbiased covariance; needs at least two rows.
FeatureStats gaussian_stats(const FeatureMatrix& features);

struct FrechetDiagnostics {
  double min_eigenvalue = 0.0;  // before clipping
  bool clipped_significant = false;  // a clipped eigenvalue exceeded the warning threshold
};

inline constexpr double kCovarianceRegularization = 1e-6;

/// |mu_a - mu_b|^2 + tr(A + B - 2 (A B)^{1/2}) with A = cov_a + eps I and
/// B = cov_b + eps I. The square-root trace comes from the eigenvalues of the
/// symmetric matrix A^{1/2} B A^{1/2}; negative eigenvalues are clipped to 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b, double eps = kCovarianceRegularization,
                        FrechetDiagnostics* diagnostics = nullptr);

/// Reference statistics over items 0..count-1 of the dataset. When `cache_dir`
/// is set the result is read from or written to a file whose name carries the
/// dataset geometry, dataset seed, extractor seed and count.
FeatureStats reference_stats(const ToyDataset& dataset, std::uint64_t extractor_seed, std::size_t count,
                             const std::filesystem::path& cache_dir = {});
std::filesystem::path reference_stats_path(const std::filesystem::path& cache_dir, const ToyDataset& dataset,
                                           std::uint64_t extractor_seed, std::size_t count);
void save_stats(const std::filesystem::path& path, const FeatureStats& stats, std::uint64_t extractor_seed);
FeatureStats load_stats(const std::filesystem::path& path);

/// Metric of a sample batch against reference statistics.
double sample_metric(const Tensor<float>& samples, const FeatureStats& reference, std::uint64_t extractor_seed);

struct SweepPoint {
  std::string name;  // e.g. "mini/adaln-zero"
  std::filesystem::path checkpoint;
};

struct EvalProtocol {
  std::size_t sample_count = 512;
  std::vector<int> step_counts{16, 32, 64, 128, 256, 1000};
  double guidance_scale = 1.0;
  std::uint64_t sample_seed = 0;
  std::uint64_t extractor_seed = 0;
  std::size_t reference_count = 10000;
  std::filesystem::path cache_dir;
  bool use_ema = true;
  SampleOptions sampling;
};

struct SweepRecord {
  std::string model;
  std::string variant;
  int patch = 0;
  int sampling_steps = 0;
  std::int64_t training_step = 0;
  double metric = 0.0;
  double sample_tflops = 0.0;
  double training_gflops = 0.0;
  bool skipped = false;
  std::string note;
};

/// One record per (point, step count). Unreadable or missing checkpoints
/// produce skip records instead of failing the sweep.
std::vector<SweepRecord> scaling_sweep(const std::vector<SweepPoint>& points, const EvalProtocol& protocol);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRecord>& records);
std::string sweep_csv(const std::vector<SweepRecord>& records);

}  // namespace dit
