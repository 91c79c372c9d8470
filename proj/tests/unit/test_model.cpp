#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dit/analysis.hpp"
#include "dit/errors.hpp"
#include "dit/grad_check.hpp"
#include "dit/model.hpp"
#include "dit/ops.hpp"

using namespace dit;

namespace {

Tensor<double> randn(Shape shape, std::uint64_t key, double stddev = 1.0) {
  KeyedRng rng({key, 77});
  return Tensor<double>::randn(std::move(shape), rng, stddev);
}

Conditioning<double> random_cond(std::size_t batch, std::size_t d, std::uint64_t key) {
  return {randn({batch, d}, key), randn({batch, d}, key + 1)};
}

bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Config, NamedSizesMatchTable) {
  const auto s = named_config("S/2");
  EXPECT_EQ(s.depth, 12);
  EXPECT_EQ(s.hidden, 384);
  EXPECT_EQ(s.heads, 6);
  const auto xl = named_config("DiT-XL/4");
  EXPECT_EQ(xl.depth, 28);
  EXPECT_EQ(xl.hidden, 1152);
  EXPECT_EQ(xl.heads, 16);
  EXPECT_EQ(xl.patch, 4);
  const auto b = named_config("B/8");
  EXPECT_EQ(b.depth, 12);
  EXPECT_EQ(b.hidden, 768);
  EXPECT_EQ(b.heads, 12);
  const auto l = named_config("L/2");
  EXPECT_EQ(l.depth, 24);
  EXPECT_EQ(l.hidden, 1024);
  EXPECT_EQ(l.heads, 16);
  const auto all = standard_configs();
  EXPECT_EQ(all.size(), 12u);
  for (const auto& nc : all) EXPECT_TRUE(nc.config.patch == 2 || nc.config.patch == 4 || nc.config.patch == 8);
}

TEST(Config, TokenCountLaw) {
  EXPECT_EQ(named_config("XL/4").tokens(), 64);
  EXPECT_EQ(named_config("XL/2").tokens(), 256);
  EXPECT_EQ(named_config("XL/8").tokens(), 16);
}

TEST(Config, ValidationErrors) {
  auto c = mini_config();
  c.patch = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = mini_config();
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(named_config("Q/2"), ConfigError);
  EXPECT_THROW(parse_variant("film"), ConfigError);
  for (auto v : all_variants()) EXPECT_EQ(parse_variant(variant_name(v)), v);
}

TEST(Patchify, RasterOrderIndexOracle) {
  // 4x4 latent, 2 channels, value = sequential index.
  std::vector<double> v(32);
  std::iota(v.begin(), v.end(), 0.0);
  const Tensor<double> z(Shape{1, 4, 4, 2}, v);
  const auto tok = patchify(z, 2);
  ASSERT_EQ(tok.shape(), (Shape{1, 4, 8}));
  for (std::size_t gr = 0; gr < 2; ++gr) {
    for (std::size_t gc = 0; gc < 2; ++gc) {
      for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 2; ++c) {
          for (std::size_t ch = 0; ch < 2; ++ch) {
            const std::size_t token = gr * 2 + gc, feature = (r * 2 + c) * 2 + ch;
            const std::size_t row = gr * 2 + r, col = gc * 2 + c;
            EXPECT_EQ(tok.data()[token * 8 + feature], v[(row * 4 + col) * 2 + ch]);
          }
        }
      }
    }
  }
}

TEST(Patchify, SinglePatchAndTokenCount) {
  const auto z = randn({2, 8, 8, 3}, 1);
  EXPECT_EQ(patchify(z, 8).shape(), (Shape{2, 1, 192}));
  const auto big = Tensor<float>(Shape{1, 32, 32, 4});
  EXPECT_EQ(patchify(big, 4).shape(), (Shape{1, 64, 64}));
  EXPECT_THROW(patchify(z, 3), ShapeError);
}

TEST(Patchify, UnpatchifyIsTheInverse) {
  const auto z = randn({3, 8, 8, 2}, 2);
  for (int p : {1, 2, 4, 8}) EXPECT_TRUE(bit_equal(unpatchify(patchify(z, p), p, 8, 2), z)) << p;
  // Decoder layout: K = 2C channels.
  const auto tok = randn({1, 256, 2 * 2 * 8}, 3);
  const auto img = unpatchify(tok, 2, 32, 8);
  EXPECT_EQ(img.shape(), (Shape{1, 32, 32, 8}));
  EXPECT_TRUE(bit_equal(patchify(img, 2), tok));
  EXPECT_THROW(unpatchify(randn({1, 5, 8}, 4), 2, 4, 2), ShapeError);
}

TEST(Embeddings, PositionalPairsAreUnitCircle) {
  const auto pe = pos_embed_2d<double>(8, 32);
  ASSERT_EQ(pe.shape(), (Shape{64, 32}));
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t j = 0; j < 32; j += 2) {
      const double s = pe.data()[r * 32 + j], c = pe.data()[r * 32 + j + 1];
      EXPECT_NEAR(s * s + c * c, 1.0, 1e-12);
    }
  }
  EXPECT_TRUE(bit_equal(pe, pos_embed_2d<double>(8, 32)));
  EXPECT_THROW(pos_embed_2d<double>(4, 30), ShapeError);
}

TEST(Embeddings, PositionalRowsAreDistinctUpTo64) {
  for (int grid : {1, 2, 16, 64}) {
    const auto pe = pos_embed_2d<double>(grid, 16);
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < pe.shape()[0]; ++r) {
      rows.emplace_back(pe.data().begin() + r * 16, pe.data().begin() + (r + 1) * 16);
    }
    std::sort(rows.begin(), rows.end());
    EXPECT_EQ(std::adjacent_find(rows.begin(), rows.end()), rows.end()) << grid;
  }
}

TEST(Embeddings, TimestepFrequencies) {
  const double t[] = {0.0, 999.0};
  const auto f = timestep_frequencies<double>(t);
  ASSERT_EQ(f.shape(), (Shape{2, 256}));
  for (std::size_t j = 0; j < 128; ++j) {
    EXPECT_EQ(f.data()[j], 1.0);
    EXPECT_EQ(f.data()[128 + j], 0.0);
  }
  // Lowest frequency is 10000^(-127/128): the ladder's period tops out near 10000 * 2 pi.
  EXPECT_NEAR(f.data()[256 + 127], std::cos(999.0 * std::pow(10000.0, -127.0 / 128.0)), 1e-15);
  EXPECT_NEAR(f.data()[256 + 128], std::sin(999.0), 1e-15);
}

TEST(Embeddings, TimestepMlpGradient) {
  auto params = init_parameters<double>(mini_config(), 3);
  Tensor<double> leaves[] = {params.at("t_embedder.mlp0.weight"), params.at("t_embedder.mlp0.bias"),
                             params.at("t_embedder.mlp2.weight"), params.at("t_embedder.mlp2.bias")};
  for (auto& l : leaves) l.set_requires_grad(true);
  const double t[] = {3.0, 640.0};
  const auto w = randn({2, 32}, 5);
  const auto r = grad_check([&] { return sum(timestep_embedding(params, t) * w); }, leaves, 1e-4, Stencil::kFourPoint);
  EXPECT_LT(r.max_rel_error, 1e-5);
  const auto a = timestep_embedding(params, t), b = timestep_embedding(params, t);
  EXPECT_TRUE(bit_equal(a, b));
}

TEST(Embeddings, LabelDropoutRates) {
  std::vector<std::int64_t> labels(100000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int64_t>(i % 4);
  KeyedRng rng({1, 2});
  const auto none = drop_labels(labels, 0.0, rng);
  EXPECT_EQ(none, labels);
  const auto all = drop_labels(labels, 1.0, rng);
  EXPECT_TRUE(std::all_of(all.begin(), all.end(), [](auto l) { return l == kNullLabel; }));
  const auto some = drop_labels(labels, 0.1, rng);
  const double n = static_cast<double>(labels.size());
  const double dropped = static_cast<double>(std::count(some.begin(), some.end(), kNullLabel));
  EXPECT_LT(std::abs(dropped / n - 0.1), 3 * std::sqrt(0.1 * 0.9 / n));
  for (std::size_t i = 0; i < labels.size(); ++i) EXPECT_TRUE(some[i] == labels[i] || some[i] == kNullLabel);
}

TEST(Embeddings, LabelLookupAndErrors) {
  const auto config = mini_config();
  const auto params = init_parameters<double>(config, 4);
  const std::int64_t labels[] = {2, kNullLabel};
  const auto e = label_embedding(config, params, std::span<const std::int64_t>(labels));
  const auto& table = params.at("y_embedder.table");
  for (std::size_t j = 0; j < 32; ++j) {
    EXPECT_EQ(e.data()[j], table.data()[2 * 32 + j]);
    EXPECT_EQ(e.data()[32 + j], table.data()[4 * 32 + j]);
  }
  const std::int64_t high[] = {4};
  EXPECT_THROW(label_embedding(config, params, std::span<const std::int64_t>(high)), IndexError);
  const std::int64_t low[] = {-2};
  EXPECT_THROW(label_embedding(config, params, std::span<const std::int64_t>(low)), IndexError);
}

TEST(Blocks, AdaLNZeroBlockIsIdentityAtInit) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto config = mini_config(BlockVariant::kAdaLNZero);
    const auto params = init_parameters<double>(config, seed);
    const auto tokens = randn({3, 4, 32}, 10 + seed, 2.0);
    const auto cond = random_cond(3, 32, 20 + seed);
    for (int b = 0; b < config.depth; ++b) {
      const auto out = dit_block(config, params, b, tokens, cond);
      for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.data()[i], tokens.data()[i], 1e-6);
    }
    const auto pf = init_parameters<float>(config, seed);
    const auto tf = tensor_cast<float>(tokens);
    const Conditioning<float> cf{tensor_cast<float>(cond.t_emb), tensor_cast<float>(cond.y_emb)};
    const auto outf = dit_block(config, pf, 0, tf, cf);
    for (std::size_t i = 0; i < outf.numel(); ++i) EXPECT_NEAR(outf.data()[i], tf.data()[i], 1e-6);
  }
}

TEST(Blocks, AdaLNZeroRegressorIsZeroAtInit) {
  const auto config = mini_config(BlockVariant::kAdaLNZero);
  const auto params = init_parameters<double>(config, 9);
  for (int b = 0; b < config.depth; ++b) {
    for (const char* part : {".adaLN.weight", ".adaLN.bias"}) {
      const auto& t = params.at("blocks." + std::to_string(b) + part);
      EXPECT_TRUE(std::all_of(t.data().begin(), t.data().end(), [](double x) { return x == 0.0; }));
    }
  }
  EXPECT_EQ(params.at("blocks.0.adaLN.weight").shape(), (Shape{32, 6 * 32}));
}

TEST(Blocks, AdaLNWithZeroModulationIsAPlainPreNormBlock) {
  auto ada_cfg = mini_config(BlockVariant::kAdaLN);
  auto vit_cfg = mini_config(BlockVariant::kInContext);
  auto ada = init_parameters<double>(ada_cfg, 5);
  auto vit = init_parameters<double>(vit_cfg, 6);
  // Share every weight the two blocks have in common; force gamma = beta = 0.
  for (const char* name : {"attn.qkv.weight", "attn.qkv.bias", "attn.proj.weight", "attn.proj.bias",
                           "mlp.fc1.weight", "mlp.fc1.bias", "mlp.fc2.weight", "mlp.fc2.bias"}) {
    const std::string full = std::string("blocks.0.") + name;
    std::copy(ada.at(full).data().begin(), ada.at(full).data().end(), vit.at(full).data().begin());
  }
  for (auto* p : {&ada.at("blocks.0.adaLN.weight"), &ada.at("blocks.0.adaLN.bias")}) {
    std::fill(p->data().begin(), p->data().end(), 0.0);
  }
  const auto tokens = randn({2, 4, 32}, 30);
  const auto a = dit_block(ada_cfg, ada, 0, tokens, random_cond(2, 32, 31));
  const auto b = dit_block(vit_cfg, vit, 0, tokens, {});
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Blocks, CrossAttentionNullCaseMatchesSelfAttentionPath) {
  auto ca_cfg = mini_config(BlockVariant::kCrossAttention);
  auto vit_cfg = mini_config(BlockVariant::kInContext);
  auto ca = init_parameters<double>(ca_cfg, 7);
  auto vit = init_parameters<double>(vit_cfg, 8);
  perturb_parameters(ca, 7, 0.1);
  const std::pair<const char*, const char*> shared[] = {
      {"norm1.weight", "norm1.weight"}, {"norm1.bias", "norm1.bias"}, {"attn.qkv.weight", "attn.qkv.weight"},
      {"attn.qkv.bias", "attn.qkv.bias"}, {"attn.proj.weight", "attn.proj.weight"}, {"attn.proj.bias", "attn.proj.bias"},
      {"norm3.weight", "norm2.weight"}, {"norm3.bias", "norm2.bias"}, {"mlp.fc1.weight", "mlp.fc1.weight"},
      {"mlp.fc1.bias", "mlp.fc1.bias"}, {"mlp.fc2.weight", "mlp.fc2.weight"}, {"mlp.fc2.bias", "mlp.fc2.bias"}};
  for (const auto& [from, to] : shared) {
    const auto& src = ca.at(std::string("blocks.0.") + from);
    std::copy(src.data().begin(), src.data().end(), vit.at(std::string("blocks.0.") + to).data().begin());
  }
  for (const char* name : {"cross.k.weight", "cross.k.bias", "cross.v.weight", "cross.v.bias", "cross.proj.weight",
                           "cross.proj.bias"}) {
    auto& t = ca.at(std::string("blocks.0.") + name);
    std::fill(t.data().begin(), t.data().end(), 0.0);
  }
  const auto tokens = randn({2, 4, 32}, 40);
  const auto a = dit_block(ca_cfg, ca, 0, tokens, random_cond(2, 32, 41));
  const auto b = dit_block(vit_cfg, vit, 0, tokens, {});
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Blocks, ConditioningShapeMismatch) {
  for (auto v : {BlockVariant::kCrossAttention, BlockVariant::kAdaLN, BlockVariant::kAdaLNZero}) {
    const auto config = mini_config(v);
    const auto params = init_parameters<double>(config, 1);
    const auto tokens = randn({2, 4, 32}, 1);
    EXPECT_THROW(dit_block(config, params, 0, tokens, random_cond(3, 32, 2)), ContractError);
  }
}

TEST(Forward, ZeroOutputAtInitForEveryVariant) {
  for (auto v : all_variants()) {
    const auto config = mini_config(v);
    const auto params = init_parameters<float>(config, 11);
    KeyedRng rng({5, 5});
    const auto z = Tensor<float>::randn({3, 8, 8, 2}, rng);
    const double t[] = {1, 500, 1000};
    const std::int64_t labels[] = {0, 3, kNullLabel};
    const auto out = forward(config, params, z, t, labels);
    EXPECT_EQ(out.eps.shape(), (Shape{3, 8, 8, 2}));
    EXPECT_EQ(out.v.shape(), (Shape{3, 8, 8, 2}));
    for (float x : out.eps.data()) EXPECT_EQ(x, 0.0f);
    for (float x : out.v.data()) EXPECT_EQ(x, 0.0f);
  }
}

TEST(Forward, AdaLNZeroTrunkIsIdentityAtInit) {
  const auto config = mini_config(BlockVariant::kAdaLNZero);
  const auto params = init_parameters<double>(config, 12);
  const auto z = randn({2, 8, 8, 2}, 13);
  const double t[] = {7, 800};
  const std::int64_t labels[] = {1, kNullLabel};
  Tensor<double> embedded;
  const auto trunk = forward_trunk(config, params, z, t, labels, &embedded);
  for (std::size_t i = 0; i < trunk.numel(); ++i) EXPECT_NEAR(trunk.data()[i], embedded.data()[i], 1e-6);
}

TEST(Forward, DeterministicAndShapeChecked) {
  for (auto v : all_variants()) {
    const auto config = mini_config(v);
    auto params = init_parameters<double>(config, 14);
    perturb_parameters(params, 14, 0.1);
    const auto z = randn({2, 8, 8, 2}, 15);
    const double t[] = {10, 20};
    const std::int64_t labels[] = {0, 1};
    const auto a = forward(config, params, z, t, labels);
    const auto b = forward(config, params, z, t, labels);
    EXPECT_TRUE(bit_equal(a.eps, b.eps));
    EXPECT_TRUE(bit_equal(a.v, b.v));
    EXPECT_THROW(forward(config, params, randn({2, 8, 8, 3}, 1), t, labels), ShapeError);
    const double t1[] = {10};
    EXPECT_THROW(forward(config, params, z, t1, labels), ShapeError);
  }
}

TEST(Forward, DecoderShapeAtFullScale) {
  auto config = named_config("S/2");
  config.depth = 1;
  const auto params = init_parameters<float>(config, 0);
  const auto tokens = Tensor<float>(Shape{1, 256, 384});
  const Conditioning<float> cond{Tensor<float>(Shape{1, 384}), Tensor<float>(Shape{1, 384})};
  EXPECT_EQ(final_layer(config, params, tokens, cond).shape(), (Shape{1, 32, 32, 8}));
}

TEST(Init, DeterministicInSeed) {
  for (auto v : all_variants()) {
    const auto a = init_parameters<float>(mini_config(v), 3);
    const auto b = init_parameters<float>(mini_config(v), 3);
    const auto c = init_parameters<float>(mini_config(v), 4);
    ASSERT_EQ(a.size(), b.size());
    bool differs = false;
    auto ia = a.begin();
    auto ic = c.begin();
    for (auto ib = b.begin(); ib != b.end(); ++ib, ++ia, ++ic) {
      EXPECT_EQ(ia->first, ib->first);
      EXPECT_TRUE(std::equal(ia->second.data().begin(), ia->second.data().end(), ib->second.data().begin()));
      differs = differs || !std::equal(ia->second.data().begin(), ia->second.data().end(), ic->second.data().begin());
    }
    EXPECT_TRUE(differs);
  }
}

TEST(Init, FinalLinearIsZero) {
  for (auto v : all_variants()) {
    const auto params = init_parameters<double>(mini_config(v), 2);
    for (const char* name : {"final.linear.weight", "final.linear.bias"}) {
      const auto& t = params.at(name);
      EXPECT_TRUE(std::all_of(t.data().begin(), t.data().end(), [](double x) { return x == 0.0; }));
    }
  }
}

TEST(Init, ParameterCountMatchesAnalysis) {
  for (auto v : all_variants()) {
    const auto config = mini_config(v);
    EXPECT_EQ(init_parameters<float>(config, 0).parameter_count(), count_params(config).total());
  }
  auto small = named_config("S/8");
  for (auto v : all_variants()) {
    small.variant = v;
    EXPECT_EQ(init_parameters<float>(small, 0).parameter_count(), count_params(small).total());
  }
}

TEST(Attention, SoftmaxRowsSumToOneInFloat) {
  KeyedRng rng({3, 3});
  const auto scores = Tensor<float>::randn({2, 2, 16, 16}, rng, 4.0);
  const auto p = softmax_lastdim(scores);
  for (std::size_t r = 0; r < 64; ++r) {
    float acc = 0;
    for (std::size_t j = 0; j < 16; ++j) acc += p.data()[r * 16 + j];
    EXPECT_NEAR(acc, 1.0f, 1e-5f);
  }
}

TEST(Forward, LabelPermutationPermutesTheTable) {
  const std::int64_t sigma[] = {2, 0, 3, 1};
  for (auto v : all_variants()) {
    const auto config = mini_config(v);
    auto params = init_parameters<double>(config, 16);
    perturb_parameters(params, 16, 0.1);
    auto permuted = params.clone();
    const auto& table = params.at("y_embedder.table");
    auto& moved = permuted.at("y_embedder.table");
    for (std::size_t k = 0; k < 4; ++k) {
      std::copy_n(table.data().begin() + k * 32, 32, moved.data().begin() + sigma[k] * 32);
    }
    const auto z = randn({3, 8, 8, 2}, 17);
    const double t[] = {5, 50, 500};
    const std::int64_t labels[] = {0, 3, kNullLabel};
    const std::int64_t relabeled[] = {sigma[0], sigma[3], kNullLabel};
    const auto a = forward(config, params, z, t, labels);
    const auto b = forward(config, permuted, z, t, relabeled);
    EXPECT_TRUE(bit_equal(a.eps, b.eps));
    EXPECT_TRUE(bit_equal(a.v, b.v));
  }
}
