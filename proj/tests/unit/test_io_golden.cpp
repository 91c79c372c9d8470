#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "dit/diffusion.hpp"
#include "dit/errors.hpp"
#include "dit/model.hpp"
#include "dit/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace dit;

namespace {

const fs::path kData = DIT_TEST_DATA_DIR;

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dit_unit_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(TensorArchive, RoundTripIsBitExact) {
  KeyedRng rng({1, 2});
  const auto f = Tensor<float>::randn({3, 4}, rng);
  const auto d = Tensor<double>::randn({2, 2, 2}, rng);
  TensorArchive ar;
  ar.metadata = R"({"k":1})";
  ar.put("f", f);
  ar.put("d", d);
  const std::int64_t ints[] = {-1, 0, 1LL << 40};
  ar.put_i64("i", {3}, ints);
  const auto back = TensorArchive::deserialize(ar.serialize());
  EXPECT_EQ(back.metadata, ar.metadata);
  const auto f2 = back.get<float>("f");
  const auto d2 = back.get<double>("d");
  EXPECT_EQ(f2.shape(), f.shape());
  EXPECT_EQ(std::memcmp(f2.data().data(), f.data().data(), f.numel() * sizeof(float)), 0);
  EXPECT_EQ(std::memcmp(d2.data().data(), d.data().data(), d.numel() * sizeof(double)), 0);
  EXPECT_EQ(back.get_i64("i"), std::vector<std::int64_t>(std::begin(ints), std::end(ints)));
  EXPECT_EQ(back.serialize(), ar.serialize());
  EXPECT_EQ(back.at("f").dtype, DType::kF32);
}

TEST(TensorArchive, PayloadIsLittleEndianRowMajor) {
  TensorArchive ar;
  ar.put("x", Tensor<float>(Shape{1, 2}, std::vector<float>{1.0f, 2.0f}));
  const auto bytes = ar.serialize();
  const std::uint8_t one[] = {0x00, 0x00, 0x80, 0x3f}, two[] = {0x00, 0x00, 0x00, 0x40};
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::memcmp(bytes.data() + bytes.size() - 8, one, 4), 0);
  EXPECT_EQ(std::memcmp(bytes.data() + bytes.size() - 4, two, 4), 0);
  EXPECT_EQ(std::memcmp(bytes.data(), "DITTNSR1", 8), 0);
}

TEST(TensorArchive, ConvertsBetweenFloatWidths) {
  TensorArchive ar;
  ar.put("x", Tensor<double>(Shape{2}, std::vector<double>{0.5, -3.25}));
  const auto f = ar.get<float>("x");
  EXPECT_EQ(f.data()[0], 0.5f);
  EXPECT_EQ(f.data()[1], -3.25f);
}

TEST(TensorArchive, MalformedInputs) {
  TensorArchive ar;
  ar.put("x", Tensor<float>(Shape{4}, 1.0f));
  auto bytes = ar.serialize();

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(TensorArchive::deserialize(bad_magic), FormatError);
  EXPECT_THROW(TensorArchive::deserialize(std::span(bytes).first(bytes.size() - 1)), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(TensorArchive::deserialize(trailing), FormatError);
  EXPECT_THROW(ar.put("x", Tensor<float>(Shape{1})), FormatError);
  EXPECT_THROW(ar.get<float>("missing"), FormatError);
  const std::int64_t ints[] = {1};
  ar.put_i64("i", {1}, ints);
  EXPECT_THROW(ar.get<float>("i"), FormatError);
  EXPECT_THROW(ar.get_i64("x"), FormatError);
  const double two[] = {1, 2};
  EXPECT_THROW(ar.put_f64("y", {3}, two), ShapeError);
  EXPECT_THROW(TensorArchive::load(temp_path("does_not_exist.ditt")), FormatError);
}

TEST(TensorArchive, FileRoundTrip) {
  TensorArchive ar;
  ar.put("x", Tensor<double>(Shape{3}, 2.0));
  const auto path = temp_path("roundtrip.ditt");
  ar.save(path);
  EXPECT_EQ(TensorArchive::load(path).serialize(), ar.serialize());
}

TEST(Golden, ForwardMatches64BitReference) {
  const auto golden = TensorArchive::load(kData / "golden_forward.ditt");
  const auto z = golden.get<double>("z");
  const auto t = golden.get_f64("t");
  const auto labels = golden.get_i64("labels");
  for (auto v : all_variants()) {
    const auto config = mini_config(v);
    auto params = init_parameters<double>(config, 7);
    perturb_parameters(params, 7, 0.1);
    const std::string name(variant_name(v));
    const auto eps_ref = golden.get<double>(name + "/eps");
    const auto v_ref = golden.get<double>(name + "/v");

    const auto y = forward(config, params, z, t, labels);
    for (std::size_t i = 0; i < eps_ref.numel(); ++i) {
      ASSERT_NEAR(y.eps.data()[i], eps_ref.data()[i], 1e-12) << name;
      ASSERT_NEAR(y.v.data()[i], v_ref.data()[i], 1e-12) << name;
    }
    // 32-bit run against the 64-bit reference.
    const auto yf = forward(config, params.cast<float>(), tensor_cast<float>(z), t, labels);
    double worst = 0;
    for (std::size_t i = 0; i < eps_ref.numel(); ++i) {
      worst = std::max(worst, std::abs(yf.eps.data()[i] - eps_ref.data()[i]));
      worst = std::max(worst, std::abs(yf.v.data()[i] - v_ref.data()[i]));
    }
    EXPECT_LT(worst, 1e-4) << name;
  }
}

TEST(Golden, HybridLossMatches64BitReference) {
  const auto golden = TensorArchive::load(kData / "golden_hybrid_loss.ditt");
  const auto t64 = golden.get_i64("t");
  const std::vector<int> t(t64.begin(), t64.end());
  const auto schedule = DiffusionSchedule::standard();
  const auto loss = hybrid_loss(schedule, golden.get<double>("eps_hat"), golden.get<double>("v"),
                                golden.get<double>("eps"), golden.get<double>("x0"), golden.get<double>("xt"), t);
  const auto ref = golden.get_f64("loss");
  EXPECT_NEAR(loss.total.item(), ref[0], 1e-12 * std::abs(ref[0]));
  EXPECT_NEAR(loss.mse, ref[1], 1e-12 * std::abs(ref[1]));
  EXPECT_NEAR(loss.vlb, ref[2], 1e-12 * std::abs(ref[2]));
  // The stored x_t agrees with a fresh forward-noising of the stored inputs.
  const auto xt = q_sample(schedule, golden.get<double>("x0"), t, golden.get<double>("eps"));
  const auto xt_ref = golden.get<double>("xt");
  for (std::size_t i = 0; i < xt.numel(); ++i) ASSERT_NEAR(xt.data()[i], xt_ref.data()[i], 1e-14);
}
