#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dit {

/// How class/timestep conditioning enters each transformer block.
enum class BlockVariant { kInContext, kCrossAttention, kAdaLN, kAdaLNZero };

std::string_view variant_name(BlockVariant variant);  // "in-context", "cross-attention", "adaln", "adaln-zero"
BlockVariant parse_variant(std::string_view name);
const std::vector<BlockVariant>& all_variants();

struct DiTConfig {
  int depth = 2;        // N
  int hidden = 32;      // d
  int heads = 2;
  int patch = 4;        // p
  int input_size = 8;   // I (latent edge)
  int channels = 2;     // C
  int num_classes = 4;  // the null label gets row `num_classes`
  BlockVariant variant = BlockVariant::kAdaLNZero;
  double class_dropout_prob = 0.1;

  int grid() const { return input_size / patch; }
  int tokens() const { return grid() * grid(); }
  int head_dim() const { return hidden / heads; }
  int out_channels() const { return 2 * channels; }
  int patch_dim() const { return patch * patch * channels; }

  /// Throws ConfigError on inconsistent hyperparameters.
  void validate() const;
  bool operator==(const DiTConfig&) const = default;
};

/// Width of the sinusoidal timestep features fed to the timestep MLP.
inline constexpr int kTimestepFrequencyDim = 256;
inline constexpr double kLayerNormEps = 1e-6;

/// The desk-scale model: d=32, N=2, heads=2, I=8, p=4, C=2, 4 classes.
DiTConfig mini_config(BlockVariant variant = BlockVariant::kAdaLNZero);

/// Size presets: S=(12,384,6), B=(12,768,12), L=(24,1024,16), XL=(28,1152,16).
/// Accepts "S/2", "DiT-XL/4", "B/8" and "mini". Latent geometry defaults to
/// 256x256 ImageNet latents (I=32, C=4, 1000 classes).
DiTConfig named_config(std::string_view name, int input_size = 32, int channels = 4, int num_classes = 1000);

struct NamedConfig {
  std::string name;  // e.g. "XL/2"
  DiTConfig config;
};

/// All twelve size x patch combinations, S/B/L/XL with p in {8, 4, 2}.
std::vector<NamedConfig> standard_configs(int input_size = 32);

void to_json(nlohmann::json& j, const DiTConfig& c);
/// Missing keys keep their defaults; "name" (e.g. "S/2") seeds the preset.
void from_json(const nlohmann::json& j, DiTConfig& c);

}  // namespace dit
