#include "dit/model.hpp"

#include <cmath>
#include <string>

#include "dit/errors.hpp"
#include "dit/ops.hpp"

namespace dit {

namespace {

std::string block_param(int index, const char* suffix) {
  return "blocks." + std::to_string(index) + "." + suffix;
}

bool is_adaptive(BlockVariant v) { return v == BlockVariant::kAdaLN || v == BlockVariant::kAdaLNZero; }

template <typename T>
Tensor<T> dense(const ParameterStore<T>& params, const std::string& prefix, const Tensor<T>& x) {
  return linear(x, params.at(prefix + ".weight"), params.at(prefix + ".bias"));
}

template <typename T>
Tensor<T> affine_norm(const ParameterStore<T>& params, const std::string& prefix, const Tensor<T>& x) {
  return layer_norm(x, kLayerNormEps) * params.at(prefix + ".weight") + params.at(prefix + ".bias");
}

// [B, d] -> [B, 1, d] so it broadcasts over tokens.
template <typename T>
Tensor<T> per_batch(const Tensor<T>& x) {
  return reshape(x, Shape{x.shape()[0], 1, x.shape()[1]});
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale_) {
  return x * add_scalar(per_batch(scale_), 1.0) + per_batch(shift);
}

// [B, L, d] -> [B, heads, L, d/heads]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  const auto& s = x.shape();
  const std::size_t h = static_cast<std::size_t>(heads);
  return permute(reshape(x, Shape{s[0], s[1], h, s[2] / h}), {0, 2, 1, 3});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const auto& s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), Shape{s[0], s[2], s[1] * s[3]});
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.shape()[2] / static_cast<std::size_t>(heads)));
  auto qh = split_heads(q, heads), kh = split_heads(k, heads), vh = split_heads(v, heads);
  auto scores = scale(matmul(qh, transpose(kh, -1, -2)), inv_sqrt);
  return merge_heads(matmul(softmax_lastdim(scores), vh));
}

template <typename T>
Tensor<T> self_attention(const ParameterStore<T>& params, int index, const Tensor<T>& x, int heads) {
  const std::size_t d = x.shape()[2];
  auto qkv = dense(params, block_param(index, "attn.qkv"), x);
  auto out = multi_head_attention(slice(qkv, -1, 0, d), slice(qkv, -1, d, d), slice(qkv, -1, 2 * d, d), heads);
  return dense(params, block_param(index, "attn.proj"), out);
}

template <typename T>
Tensor<T> mlp(const ParameterStore<T>& params, int index, const Tensor<T>& x) {
  return dense(params, block_param(index, "mlp.fc2"), gelu_tanh(dense(params, block_param(index, "mlp.fc1"), x)));
}

template <typename T>
void check_cond(const Conditioning<T>& cond, std::size_t batch, std::size_t d) {
  const Shape want{batch, d};
  if (!cond.t_emb.defined() || !cond.y_emb.defined() || cond.t_emb.shape() != want || cond.y_emb.shape() != want) {
    throw ContractError("conditioning bundle must hold two " + shape_str(want) + " embeddings");
  }
}

}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& z, int patch) {
  if (z.rank() != 4 || z.shape()[1] != z.shape()[2]) throw ShapeError("patchify expects [B, I, I, C], got " + shape_str(z.shape()));
  const std::size_t b = z.shape()[0], i = z.shape()[1], c = z.shape()[3], p = static_cast<std::size_t>(patch);
  if (patch < 1 || i % p != 0) throw ShapeError("input size " + std::to_string(i) + " not divisible by patch " + std::to_string(patch));
  const std::size_t g = i / p;
  auto grid = permute(reshape(z, Shape{b, g, p, g, p, c}), {0, 1, 3, 2, 4, 5});
  return reshape(grid, Shape{b, g * g, p * p * c});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, int patch, int input_size, int channels) {
  const std::size_t p = static_cast<std::size_t>(patch), i = static_cast<std::size_t>(input_size),
                    k = static_cast<std::size_t>(channels);
  if (patch < 1 || input_size % patch != 0) throw ShapeError("input size not divisible by patch");
  const std::size_t g = i / p;
  if (tokens.rank() != 3 || tokens.shape()[1] != g * g || tokens.shape()[2] != p * p * k) {
    throw ShapeError("unpatchify expects [B, " + std::to_string(g * g) + ", " + std::to_string(p * p * k) + "], got " +
                     shape_str(tokens.shape()));
  }
  const std::size_t b = tokens.shape()[0];
  auto grid = permute(reshape(tokens, Shape{b, g, g, p, p, k}), {0, 1, 3, 2, 4, 5});
  return reshape(grid, Shape{b, i, i, k});
}

template <typename T>
Tensor<T> pos_embed_2d(int grid, int dim) {
  if (grid < 1 || dim < 4 || dim % 4 != 0) throw ShapeError("pos_embed_2d needs grid >= 1 and dim divisible by 4");
  const int quarter = dim / 4;
  const std::size_t g = static_cast<std::size_t>(grid), d = static_cast<std::size_t>(dim);
  std::vector<T> out(g * g * d);
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      T* row = out.data() + (r * g + c) * d;
      for (int j = 0; j < quarter; ++j) {
        const double omega = std::pow(10000.0, -static_cast<double>(j) / quarter);
        const double ar = static_cast<double>(r) * omega, ac = static_cast<double>(c) * omega;
        row[2 * j] = static_cast<T>(std::sin(ar));
        row[2 * j + 1] = static_cast<T>(std::cos(ar));
        row[2 * quarter + 2 * j] = static_cast<T>(std::sin(ac));
        row[2 * quarter + 2 * j + 1] = static_cast<T>(std::cos(ac));
      }
    }
  }
  return Tensor<T>(Shape{g * g, d}, std::move(out));
}

template <typename T>
Tensor<T> timestep_frequencies(std::span<const double> t) {
  constexpr int half = kTimestepFrequencyDim / 2;
  std::vector<T> out(t.size() * kTimestepFrequencyDim);
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (!(t[b] >= 0.0)) throw IndexError("timestep must be >= 0");
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * j / half);
      out[b * kTimestepFrequencyDim + static_cast<std::size_t>(j)] = static_cast<T>(std::cos(t[b] * freq));
      out[b * kTimestepFrequencyDim + static_cast<std::size_t>(half + j)] = static_cast<T>(std::sin(t[b] * freq));
    }
  }
  return Tensor<T>(Shape{t.size(), static_cast<std::size_t>(kTimestepFrequencyDim)}, std::move(out));
}

template <typename T>
Tensor<T> timestep_embedding(const ParameterStore<T>& params, std::span<const double> t) {
  auto h = silu(dense(params, "t_embedder.mlp0", timestep_frequencies<T>(t)));
  return dense(params, "t_embedder.mlp2", h);
}

std::vector<std::int64_t> drop_labels(std::span<const std::int64_t> labels, double prob, KeyedRng& rng) {
  std::vector<std::int64_t> out(labels.begin(), labels.end());
  for (auto& l : out) {
    if (rng.bernoulli(prob)) l = kNullLabel;
  }
  return out;
}

template <typename T>
Tensor<T> label_embedding(const DiTConfig& config, const ParameterStore<T>& params,
                          std::span<const std::int64_t> labels, KeyedRng* dropout_rng) {
  for (auto r : labels) {
    if (r != kNullLabel && (r < 0 || r >= config.num_classes)) {
      throw IndexError("class label " + std::to_string(r) + " outside 0.." + std::to_string(config.num_classes - 1));
    }
  }
  std::vector<std::int64_t> rows(labels.begin(), labels.end());
  if (dropout_rng) rows = drop_labels(labels, config.class_dropout_prob, *dropout_rng);
  for (auto& r : rows) {
    if (r == kNullLabel) r = config.num_classes;
  }
  return embedding(params.at("y_embedder.table"), std::span<const std::int64_t>(rows));
}

template <typename T>
Tensor<T> dit_block(const DiTConfig& config, const ParameterStore<T>& params, int index, const Tensor<T>& tokens,
                    const Conditioning<T>& cond) {
  if (tokens.rank() != 3 || tokens.shape()[2] != static_cast<std::size_t>(config.hidden)) {
    throw ShapeError("dit_block expects [B, T, d], got " + shape_str(tokens.shape()));
  }
  const std::size_t batch = tokens.shape()[0], d = static_cast<std::size_t>(config.hidden);
  Tensor<T> x = tokens;
  switch (config.variant) {
    case BlockVariant::kInContext: {
      x = x + self_attention(params, index, affine_norm(params, block_param(index, "norm1"), x), config.heads);
      return x + mlp(params, index, affine_norm(params, block_param(index, "norm2"), x));
    }
    case BlockVariant::kCrossAttention: {
      check_cond(cond, batch, d);
      x = x + self_attention(params, index, affine_norm(params, block_param(index, "norm1"), x), config.heads);
      const Tensor<T> pair[] = {per_batch(cond.t_emb), per_batch(cond.y_emb)};
      auto ctx = affine_norm(params, block_param(index, "norm_cond"), concat<T>(pair, 1));
      auto q = dense(params, block_param(index, "cross.q"), affine_norm(params, block_param(index, "norm2"), x));
      auto k = dense(params, block_param(index, "cross.k"), ctx);
      auto v = dense(params, block_param(index, "cross.v"), ctx);
      x = x + dense(params, block_param(index, "cross.proj"), multi_head_attention(q, k, v, config.heads));
      return x + mlp(params, index, affine_norm(params, block_param(index, "norm3"), x));
    }
    case BlockVariant::kAdaLN:
    case BlockVariant::kAdaLNZero: {
      check_cond(cond, batch, d);
      const bool gated = config.variant == BlockVariant::kAdaLNZero;
      auto mod = dense(params, block_param(index, "adaLN"), silu(cond.t_emb + cond.y_emb));
      auto chunk = [&](std::size_t i) { return slice(mod, -1, i * d, d); };
      // adaLN-Zero: (shift, scale, gate) x (attention, mlp); adaLN drops the gates.
      const std::size_t stride = gated ? 3 : 2;
      auto h = modulate(layer_norm(x, kLayerNormEps), chunk(0), chunk(1));
      auto attn = self_attention(params, index, h, config.heads);
      x = x + (gated ? per_batch(chunk(2)) * attn : attn);
      h = modulate(layer_norm(x, kLayerNormEps), chunk(stride), chunk(stride + 1));
      auto ff = mlp(params, index, h);
      return x + (gated ? per_batch(chunk(stride + 2)) * ff : ff);
    }
  }
  throw ContractError("unknown block variant");
}

template <typename T>
Tensor<T> final_layer(const DiTConfig& config, const ParameterStore<T>& params, const Tensor<T>& tokens,
                      const Conditioning<T>& cond) {
  Tensor<T> h;
  if (is_adaptive(config.variant)) {
    check_cond(cond, tokens.shape()[0], static_cast<std::size_t>(config.hidden));
    const std::size_t d = static_cast<std::size_t>(config.hidden);
    auto mod = dense(params, "final.adaLN", silu(cond.t_emb + cond.y_emb));
    h = modulate(layer_norm(tokens, kLayerNormEps), slice(mod, -1, 0, d), slice(mod, -1, d, d));
  } else {
    h = affine_norm(params, "final.norm", tokens);
  }
  return unpatchify(dense(params, "final.linear", h), config.patch, config.input_size, config.out_channels());
}

namespace {

template <typename T>
struct Trunk {
  Tensor<T> tokens;
  Conditioning<T> cond;
};

template <typename T>
Trunk<T> run_trunk(const DiTConfig& config, const ParameterStore<T>& params, const Tensor<T>& z,
                   std::span<const double> t, std::span<const std::int64_t> labels, Tensor<T>* embedded_input) {
  const std::size_t i = static_cast<std::size_t>(config.input_size), c = static_cast<std::size_t>(config.channels);
  if (z.rank() != 4 || z.shape()[1] != i || z.shape()[2] != i || z.shape()[3] != c) {
    throw ShapeError("model input must be [B, " + std::to_string(i) + ", " + std::to_string(i) + ", " +
                     std::to_string(c) + "], got " + shape_str(z.shape()));
  }
  const std::size_t batch = z.shape()[0];
  if (t.size() != batch || labels.size() != batch) throw ShapeError("timestep/label count does not match batch");

  Trunk<T> out;
  out.cond = {timestep_embedding(params, t), label_embedding(config, params, labels)};
  auto x = dense(params, "x_embedder", patchify(z, config.patch)) + pos_embed_2d<T>(config.grid(), config.hidden);
  if (embedded_input) *embedded_input = x;

  if (config.variant == BlockVariant::kInContext) {
    const Tensor<T> seq[] = {x, per_batch(out.cond.t_emb), per_batch(out.cond.y_emb)};
    x = concat<T>(seq, 1);
  }
  for (int b = 0; b < config.depth; ++b) x = dit_block(config, params, b, x, out.cond);
  if (config.variant == BlockVariant::kInContext) x = slice(x, 1, 0, static_cast<std::size_t>(config.tokens()));
  out.tokens = x;
  return out;
}

}  // namespace

template <typename T>
Tensor<T> forward_trunk(const DiTConfig& config, const ParameterStore<T>& params, const Tensor<T>& z,
                        std::span<const double> t, std::span<const std::int64_t> labels, Tensor<T>* embedded_input) {
  return run_trunk(config, params, z, t, labels, embedded_input).tokens;
}

template <typename T>
ModelOutput<T> forward(const DiTConfig& config, const ParameterStore<T>& params, const Tensor<T>& z,
                       std::span<const double> t, std::span<const std::int64_t> labels) {
  auto trunk = run_trunk(config, params, z, t, labels, static_cast<Tensor<T>*>(nullptr));
  auto out = final_layer(config, params, trunk.tokens, trunk.cond);
  const std::size_t ch = static_cast<std::size_t>(config.channels);
  return {slice(out, -1, 0, ch), slice(out, -1, ch, ch)};
}

template <typename T>
ParameterStore<T> init_parameters(const DiTConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = static_cast<std::size_t>(config.hidden);
  ParameterStore<T> store;
  std::uint64_t counter = 0;
  auto normal = [&](std::string name, Shape shape, double stddev) {
    KeyedRng rng({seed, static_cast<std::uint64_t>(Stream::kInit), counter++});
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
    store.add(std::move(name), Tensor<T>(std::move(shape), std::move(v)));
  };
  auto constant = [&](std::string name, Shape shape, double value) {
    ++counter;
    store.add(std::move(name), Tensor<T>(std::move(shape), static_cast<T>(value)));
  };
  auto dense_layer = [&](const std::string& prefix, std::size_t in, std::size_t out, bool zero) {
    if (zero) constant(prefix + ".weight", Shape{in, out}, 0.0);
    else normal(prefix + ".weight", Shape{in, out}, 0.02);
    constant(prefix + ".bias", Shape{out}, 0.0);
  };
  auto norm_affine = [&](const std::string& prefix) {
    constant(prefix + ".weight", Shape{d}, 1.0);
    constant(prefix + ".bias", Shape{d}, 0.0);
  };

  const bool zero_regressor = config.variant == BlockVariant::kAdaLNZero;
  dense_layer("x_embedder", static_cast<std::size_t>(config.patch_dim()), d, false);
  dense_layer("t_embedder.mlp0", kTimestepFrequencyDim, d, false);
  dense_layer("t_embedder.mlp2", d, d, false);
  normal("y_embedder.table", Shape{static_cast<std::size_t>(config.num_classes) + 1, d}, 0.02);

  for (int b = 0; b < config.depth; ++b) {
    auto name = [b](const char* s) { return block_param(b, s); };
    switch (config.variant) {
      case BlockVariant::kInContext:
        norm_affine(name("norm1"));
        dense_layer(name("attn.qkv"), d, 3 * d, false);
        dense_layer(name("attn.proj"), d, d, false);
        norm_affine(name("norm2"));
        break;
      case BlockVariant::kCrossAttention:
        norm_affine(name("norm1"));
        dense_layer(name("attn.qkv"), d, 3 * d, false);
        dense_layer(name("attn.proj"), d, d, false);
        norm_affine(name("norm2"));
        norm_affine(name("norm_cond"));
        dense_layer(name("cross.q"), d, d, false);
        dense_layer(name("cross.k"), d, d, false);
        dense_layer(name("cross.v"), d, d, false);
        dense_layer(name("cross.proj"), d, d, false);
        norm_affine(name("norm3"));
        break;
      case BlockVariant::kAdaLN:
      case BlockVariant::kAdaLNZero:
        dense_layer(name("attn.qkv"), d, 3 * d, false);
        dense_layer(name("attn.proj"), d, d, false);
        dense_layer(name("adaLN"), d, (zero_regressor ? 6 : 4) * d, zero_regressor);
        break;
    }
    dense_layer(name("mlp.fc1"), d, 4 * d, false);
    dense_layer(name("mlp.fc2"), 4 * d, d, false);
  }

  if (is_adaptive(config.variant)) {
    dense_layer("final.adaLN", d, 2 * d, zero_regressor);
  } else {
    norm_affine("final.norm");
  }
  dense_layer("final.linear", d, static_cast<std::size_t>(config.patch * config.patch * config.out_channels()), true);
  return store;
}

template <typename T>
void perturb_parameters(ParameterStore<T>& params, std::uint64_t seed, double stddev) {
  std::uint64_t counter = 0;
  for (auto& [name, tensor] : params) {
    KeyedRng rng({seed, static_cast<std::uint64_t>(Stream::kFixture), counter++});
    for (auto& v : tensor.data()) v = static_cast<T>(v + stddev * rng.normal());
  }
}

#define DIT_INSTANTIATE_MODEL(T)                                                                                    \
  template Tensor<T> patchify(const Tensor<T>&, int);                                                               \
  template Tensor<T> unpatchify(const Tensor<T>&, int, int, int);                                                   \
  template Tensor<T> pos_embed_2d<T>(int, int);                                                                     \
  template Tensor<T> timestep_frequencies<T>(std::span<const double>);                                              \
  template Tensor<T> timestep_embedding(const ParameterStore<T>&, std::span<const double>);                         \
  template Tensor<T> label_embedding(const DiTConfig&, const ParameterStore<T>&, std::span<const std::int64_t>,     \
                                     KeyedRng*);                                                                    \
  template Tensor<T> dit_block(const DiTConfig&, const ParameterStore<T>&, int, const Tensor<T>&,                   \
                               const Conditioning<T>&);                                                             \
  template Tensor<T> final_layer(const DiTConfig&, const ParameterStore<T>&, const Tensor<T>&,                      \
                                 const Conditioning<T>&);                                                           \
  template Tensor<T> forward_trunk(const DiTConfig&, const ParameterStore<T>&, const Tensor<T>&,                    \
                                   std::span<const double>, std::span<const std::int64_t>, Tensor<T>*);             \
  template ModelOutput<T> forward(const DiTConfig&, const ParameterStore<T>&, const Tensor<T>&,                     \
                                  std::span<const double>, std::span<const std::int64_t>);                          \
  template ParameterStore<T> init_parameters<T>(const DiTConfig&, std::uint64_t);                                   \
  template void perturb_parameters(ParameterStore<T>&, std::uint64_t, double);

DIT_INSTANTIATE_MODEL(float)
DIT_INSTANTIATE_MODEL(double)

#undef DIT_INSTANTIATE_MODEL

}  // namespace dit
