#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dit/rng.hpp"
#include "dit/tensor.hpp"

namespace dit {

/// Procedural class-conditional latents standing in for encoded images.
///
/// Class k is a horizontal Gaussian band centred on row (k + 0.5) I / K whose
/// column profile is flat for even k and a centred cosine for odd k, with a
/// class-dependent sign per channel, plus i.i.d. Gaussian texture. Every
/// pattern is mirror-symmetric, so horizontal flips preserve the class.
/// Latents are standardized per channel with statistics measured on a
/// calibration draw at construction.
class ToyDataset {
 public:
  ToyDataset(int num_classes, int input_size, int channels, std::uint64_t seed);

  struct Item {
    std::vector<float> latent;  // I * I * C, channels-last
    std::int64_t label = 0;
  };

  /// Item `index` of the infinite stream; a pure function of (seed, index).
  Item get(std::uint64_t index) const;
  /// Stacks items into [B, I, I, C] and writes their labels.
  Tensor<float> batch(std::span<const std::uint64_t> indices, std::vector<std::int64_t>& labels) const;
  /// Noise-free standardized pattern of class k, [I, I, C].
  std::vector<double> class_mean(int k) const;

  int num_classes() const { return num_classes_; }
  int input_size() const { return input_size_; }
  int channels() const { return channels_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t item_size() const { return static_cast<std::size_t>(input_size_ * input_size_ * channels_); }

  static constexpr double kPatternAmplitude = 2.0;
  static constexpr double kTextureStddev = 0.5;

 private:
  Item raw(KeyedRng& rng) const;
  double pattern(int k, int row, int col, int ch) const;

  int num_classes_;
  int input_size_;
  int channels_;
  std::uint64_t seed_;
  std::vector<double> channel_mean_;
  std::vector<double> channel_inv_std_;
};

/// Reverses the column axis of [I, I, C] or every item of [B, I, I, C].
template <typename T>
Tensor<T> flip_columns(const Tensor<T>& z);

/// Flips each item independently with probability 0.5.
template <typename T>
Tensor<T> hflip(const Tensor<T>& z, KeyedRng& rng);

}  // namespace dit
