#pragma once

// The DiT network: patch embedding, fixed 2-D sine-cosine positions,
// timestep / label embedders, N conditioning blocks and a linear decoder that
// predicts noise plus a variance-interpolation channel.
//
// Latents are channels-last: a batch is [B, I, I, C].

#include <cstdint>
#include <span>
#include <vector>

#include "dit/config.hpp"
#include "dit/parameters.hpp"
#include "dit/rng.hpp"
#include "dit/tensor.hpp"

namespace dit {

/// Label value that selects the learned null embedding.
inline constexpr std::int64_t kNullLabel = -1;

/// [B, I, I, C] -> [B, (I/p)^2, p*p*C]; patches in raster order, each
/// flattened as (row, col, channel).
template <typename T>
Tensor<T> patchify(const Tensor<T>& z, int patch);

/// Inverse of patchify for K channels: [B, T, p*p*K] -> [B, I, I, K].
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, int patch, int input_size, int channels);

/// Fixed [grid*grid, d] embedding. The first d/2 features encode the row and
/// the rest the column, each as interleaved (sin, cos) pairs over the
/// frequency ladder 10000^(-j / (d/4)).
template <typename T>
Tensor<T> pos_embed_2d(int grid, int dim);

/// [B, 256] features: cos(t f_j) for j < 128 followed by sin(t f_j), with
/// f_j = 10000^(-j/128).
template <typename T>
Tensor<T> timestep_frequencies(std::span<const double> t);

/// Frequency features -> Linear(256, d) -> SiLU -> Linear(d, d).
template <typename T>
Tensor<T> timestep_embedding(const ParameterStore<T>& params, std::span<const double> t);

/// Replaces each label by kNullLabel with probability `prob`.
std::vector<std::int64_t> drop_labels(std::span<const std::int64_t> labels, double prob, KeyedRng& rng);

/// Row lookup in the (num_classes + 1) x d table; kNullLabel maps to the last
/// row. When `dropout_rng` is given, labels are first dropped with the
/// config's class_dropout_prob.
template <typename T>
Tensor<T> label_embedding(const DiTConfig& config, const ParameterStore<T>& params,
                          std::span<const std::int64_t> labels, KeyedRng* dropout_rng = nullptr);

template <typename T>
struct Conditioning {
  Tensor<T> t_emb;  // [B, d]
  Tensor<T> y_emb;  // [B, d]
};

/// One transformer block of the configured variant. For in-context blocks the
/// conditioning tokens are already part of `tokens` and `cond` is unused.
template <typename T>
Tensor<T> dit_block(const DiTConfig& config, const ParameterStore<T>& params, int index, const Tensor<T>& tokens,
                    const Conditioning<T>& cond);

/// Final norm (adaptive for adaLN variants) + linear decode + unpatchify:
/// [B, T, d] -> [B, I, I, 2C].
template <typename T>
Tensor<T> final_layer(const DiTConfig& config, const ParameterStore<T>& params, const Tensor<T>& tokens,
                      const Conditioning<T>& cond);

template <typename T>
struct ModelOutput {
  Tensor<T> eps;  // [B, I, I, C]
  Tensor<T> v;    // [B, I, I, C], raw variance-interpolation channel
};

/// Full network. `t` holds the (original-schedule) timestep per sample.
/// Labels are used as given; apply drop_labels beforehand for training.
template <typename T>
ModelOutput<T> forward(const DiTConfig& config, const ParameterStore<T>& params, const Tensor<T>& z,
                       std::span<const double> t, std::span<const std::int64_t> labels);

/// Hidden tokens after the block stack (before the final layer); used to check
/// that adaLN-Zero networks start as the identity.
template <typename T>
Tensor<T> forward_trunk(const DiTConfig& config, const ParameterStore<T>& params, const Tensor<T>& z,
                        std::span<const double> t, std::span<const std::int64_t> labels,
                        Tensor<T>* embedded_input = nullptr);

/// Normal(0, 0.02) linears with zero biases, unit layer-norm gains, zero
/// final decoder, and zero adaLN-Zero regressors. Deterministic in seed;
/// values are drawn in double and rounded to T.
template <typename T>
ParameterStore<T> init_parameters(const DiTConfig& config, std::uint64_t seed);

/// Adds Normal(0, stddev) noise to every parameter (used to move off the
/// zero-initialized point before gradient checks).
template <typename T>
void perturb_parameters(ParameterStore<T>& params, std::uint64_t seed, double stddev);

}  // namespace dit
