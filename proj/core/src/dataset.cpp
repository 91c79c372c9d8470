#include "dit/dataset.hpp"

#include <cmath>
#include <numbers>

#include "dit/errors.hpp"

namespace dit {

namespace {
constexpr int kCalibrationItems = 4096;
}

ToyDataset::ToyDataset(int num_classes, int input_size, int channels, std::uint64_t seed)
    : num_classes_(num_classes), input_size_(input_size), channels_(channels), seed_(seed) {
  if (num_classes < 1 || input_size < 1 || channels < 1) throw ConfigError("toy dataset dimensions must be positive");
  const auto c = static_cast<std::size_t>(channels);
  std::vector<double> sum(c, 0.0), sum_sq(c, 0.0);
  channel_mean_.assign(c, 0.0);
  channel_inv_std_.assign(c, 1.0);
  for (int i = 0; i < kCalibrationItems; ++i) {
    KeyedRng rng({seed, static_cast<std::uint64_t>(Stream::kCalibration), static_cast<std::uint64_t>(i)});
    const auto item = raw(rng);
    for (std::size_t j = 0; j < item.latent.size(); ++j) {
      sum[j % c] += item.latent[j];
      sum_sq[j % c] += static_cast<double>(item.latent[j]) * item.latent[j];
    }
  }
  const double n = static_cast<double>(kCalibrationItems) * input_size * input_size;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mu = sum[ch] / n;
    channel_mean_[ch] = mu;
    channel_inv_std_[ch] = 1.0 / std::sqrt(sum_sq[ch] / n - mu * mu);
  }
}

double ToyDataset::pattern(int k, int row, int col, int ch) const {
  const double centre = (k + 0.5) * input_size_ / num_classes_;
  const double width = std::max(0.75, 0.5 * input_size_ / num_classes_);
  const double band = std::exp(-0.5 * (row - centre) * (row - centre) / (width * width));
  const double mid = 0.5 * (input_size_ - 1);
  const double profile = (k % 2 == 0) ? 1.0 : std::cos(2.0 * std::numbers::pi * (col - mid) / input_size_);
  const double sign = ((k / 2 + ch) % 2 == 0) ? 1.0 : -1.0;
  return kPatternAmplitude * sign * band * profile;
}

ToyDataset::Item ToyDataset::raw(KeyedRng& rng) const {
  Item item;
  item.label = rng.uniform_int(0, num_classes_ - 1);
  item.latent.resize(item_size());
  std::size_t j = 0;
  for (int r = 0; r < input_size_; ++r) {
    for (int col = 0; col < input_size_; ++col) {
      for (int ch = 0; ch < channels_; ++ch) {
        const double v = pattern(static_cast<int>(item.label), r, col, ch) + kTextureStddev * rng.normal();
        item.latent[j++] = static_cast<float>(v);
      }
    }
  }
  return item;
}

ToyDataset::Item ToyDataset::get(std::uint64_t index) const {
  KeyedRng rng({seed_, static_cast<std::uint64_t>(Stream::kData), index});
  Item item = raw(rng);
  const auto c = static_cast<std::size_t>(channels_);
  for (std::size_t j = 0; j < item.latent.size(); ++j) {
    item.latent[j] = static_cast<float>((item.latent[j] - channel_mean_[j % c]) * channel_inv_std_[j % c]);
  }
  return item;
}

Tensor<float> ToyDataset::batch(std::span<const std::uint64_t> indices, std::vector<std::int64_t>& labels) const {
  labels.clear();
  std::vector<float> values;
  values.reserve(indices.size() * item_size());
  for (auto idx : indices) {
    auto item = get(idx);
    labels.push_back(item.label);
    values.insert(values.end(), item.latent.begin(), item.latent.end());
  }
  const auto i = static_cast<std::size_t>(input_size_);
  return Tensor<float>(Shape{indices.size(), i, i, static_cast<std::size_t>(channels_)}, std::move(values));
}

std::vector<double> ToyDataset::class_mean(int k) const {
  if (k < 0 || k >= num_classes_) throw IndexError("class " + std::to_string(k) + " out of range");
  std::vector<double> out;
  out.reserve(item_size());
  const auto c = static_cast<std::size_t>(channels_);
  for (int r = 0; r < input_size_; ++r) {
    for (int col = 0; col < input_size_; ++col) {
      for (int ch = 0; ch < channels_; ++ch) {
        const auto cc = static_cast<std::size_t>(ch) % c;
        out.push_back((pattern(k, r, col, ch) - channel_mean_[cc]) * channel_inv_std_[cc]);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> flip_columns(const Tensor<T>& z) {
  if (z.rank() != 3 && z.rank() != 4) throw ShapeError("flip expects [I, I, C] or [B, I, I, C]");
  const auto& s = z.shape();
  const std::size_t c = s.back(), w = s[s.size() - 2], rows = z.numel() / (w * c);
  auto src = z.data();
  std::vector<T> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      for (std::size_t ch = 0; ch < c; ++ch) out[(r * w + col) * c + ch] = src[(r * w + (w - 1 - col)) * c + ch];
    }
  }
  return Tensor<T>(s, std::move(out));
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& z, KeyedRng& rng) {
  if (z.rank() == 3) return rng.bernoulli(0.5) ? flip_columns(z) : z.detach();
  if (z.rank() != 4) throw ShapeError("hflip expects [I, I, C] or [B, I, I, C]");
  const std::size_t b = z.shape()[0], per = z.numel() / b;
  auto flipped = flip_columns(z);
  auto out = z.detach();
  for (std::size_t i = 0; i < b; ++i) {
    if (rng.bernoulli(0.5)) {
      std::copy_n(flipped.data().begin() + static_cast<std::ptrdiff_t>(i * per), per,
                  out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
  }
  return out;
}

template Tensor<float> flip_columns(const Tensor<float>&);
template Tensor<double> flip_columns(const Tensor<double>&);
template Tensor<float> hflip(const Tensor<float>&, KeyedRng&);
template Tensor<double> hflip(const Tensor<double>&, KeyedRng&);

}  // namespace dit
