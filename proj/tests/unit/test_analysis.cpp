#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "dit/analysis.hpp"
#include "dit/config.hpp"
#include "dit/errors.hpp"
#include "dit/model.hpp"
#include "dit/parameters.hpp"

using namespace dit;

namespace {

DiTConfig at(const std::string& name, BlockVariant v = BlockVariant::kAdaLNZero, int image = 256) {
  auto c = named_config(name, image / 8);
  c.variant = v;
  return c;
}

double rel(double a, double b) { return std::fabs(a - b) / std::fabs(b); }

}  // namespace

TEST(AnalysisFlops, TableOneAtPatchFour) {
  EXPECT_LT(rel(count_flops(at("S/4")).gflops(), 1.4), 0.02);
  EXPECT_LT(rel(count_flops(at("B/4")).gflops(), 5.6), 0.02);
  EXPECT_LT(rel(count_flops(at("L/4")).gflops(), 19.7), 0.02);
  EXPECT_LT(rel(count_flops(at("XL/4")).gflops(), 29.1), 0.02);
}

TEST(AnalysisFlops, XlTwoVariantsAndLargeImage) {
  EXPECT_LT(rel(count_flops(at("XL/2")).gflops(), 118.64), 0.01);
  EXPECT_LT(rel(count_flops(at("XL/2", BlockVariant::kInContext)).gflops(), 119.37), 0.01);
  EXPECT_LT(rel(count_flops(at("XL/2", BlockVariant::kCrossAttention)).gflops(), 137.62), 0.01);
  EXPECT_LT(rel(count_flops(at("XL/2", BlockVariant::kAdaLN)).gflops(), 118.56), 0.01);
  EXPECT_LT(rel(count_flops(at("XL/2", BlockVariant::kAdaLNZero, 512)).gflops(), 524.60), 0.01);
}

TEST(AnalysisFlops, CrossAttentionOverhead) {
  const double base = count_flops(at("XL/2")).gflops();
  const double cross = count_flops(at("XL/2", BlockVariant::kCrossAttention)).gflops();
  const double overhead = cross / base - 1.0;
  EXPECT_GE(overhead, 0.14);
  EXPECT_LE(overhead, 0.17);
}

TEST(AnalysisFlops, TotalIsSumOfComponents) {
  for (auto v : all_variants()) {
    const auto r = count_flops(at("B/4", v));
    std::uint64_t sum = 0;
    for (const auto& c : r.components) sum += c.per_block ? c.count * static_cast<std::uint64_t>(r.blocks) : c.count;
    EXPECT_EQ(r.total(), sum);
    EXPECT_EQ(r.component_total("label_lookup"), 0u);
  }
  EXPECT_THROW(count_flops(at("S/2")).component_total("softmax"), IndexError);
}

TEST(AnalysisFlops, HandCountForMini) {
  // d=32, T=4, p=4, C=2, N=2, adaLN-Zero.
  const std::uint64_t d = 32, t = 4, n = 2;
  const std::uint64_t block = 4 * t * d * d + 2 * t * t * d + 8 * t * d * d + 6 * d * d;
  const std::uint64_t embed = t * 32 * d + 256 * d + d * d + t * d * 64 + 2 * d * d;
  EXPECT_EQ(count_flops(mini_config()).total(), n * block + embed);
}

TEST(AnalysisFlops, InvalidConfigRejected) {
  auto c = mini_config();
  c.patch = 3;
  EXPECT_THROW(count_flops(c), ConfigError);
  EXPECT_THROW(count_params(c), ConfigError);
}

TEST(AnalysisParams, TableFourCounts) {
  EXPECT_LT(rel(count_params(at("S/2")).millions(), 33), 0.02);
  EXPECT_LT(rel(count_params(at("B/2")).millions(), 130), 0.02);
  EXPECT_LT(rel(count_params(at("L/2")).millions(), 458), 0.02);
  EXPECT_LT(rel(count_params(at("XL/2")).millions(), 675), 0.02);
  EXPECT_LT(rel(count_params(at("XL/2", BlockVariant::kInContext)).millions(), 449), 0.02);
  EXPECT_LT(rel(count_params(at("XL/2", BlockVariant::kCrossAttention)).millions(), 598), 0.02);
  EXPECT_LT(rel(count_params(at("XL/2", BlockVariant::kAdaLN)).millions(), 600), 0.02);
}

TEST(AnalysisParams, MatchesInstantiatedStore) {
  for (auto v : all_variants()) {
    auto s = at("S/2", v);
    EXPECT_EQ(count_params(s).total(), init_parameters<float>(s, 0).parameter_count()) << variant_name(v);
    auto m = mini_config(v);
    EXPECT_EQ(count_params(m).total(), init_parameters<float>(m, 0).parameter_count()) << variant_name(v);
  }
}

TEST(AnalysisPatchLaws, TokensQuadrupleWhenPatchHalves) {
  for (const char* size : {"S", "B", "L", "XL"}) {
    const auto p8 = at(std::string(size) + "/8"), p4 = at(std::string(size) + "/4"), p2 = at(std::string(size) + "/2");
    EXPECT_EQ(p4.tokens(), 4 * p8.tokens());
    EXPECT_EQ(p2.tokens(), 4 * p4.tokens());
    EXPECT_GE(count_flops(p4).transformer_core(), 4 * count_flops(p8).transformer_core());
    EXPECT_GE(count_flops(p2).transformer_core(), 4 * count_flops(p4).transformer_core());
    const double m8 = count_params(p8).millions(), m4 = count_params(p4).millions(), m2 = count_params(p2).millions();
    const double lo = std::min({m8, m4, m2}), hi = std::max({m8, m4, m2});
    EXPECT_LT((hi - lo) / lo, 0.01) << size;
  }
}

TEST(AnalysisCompute, TrainingIsThreeTimesForward) {
  EXPECT_EQ(training_compute(2.5, 256, 1000), 2.5 * 256 * 1000 * 3.0);
  EXPECT_EQ(training_compute(118.64, 256, 0), 0.0);
  EXPECT_EQ(training_compute(0.0, 256, 10), 0.0);
}

TEST(AnalysisCompute, SamplingReferenceValues) {
  const double l2 = count_flops(at("L/2")).gflops();
  const double xl2 = count_flops(at("XL/2")).gflops();
  EXPECT_DOUBLE_EQ(round_significant(sampling_compute(l2, 1000, false), 3), 80.7);
  EXPECT_DOUBLE_EQ(round_significant(sampling_compute(xl2, 128, false), 3), 15.2);
  EXPECT_EQ(sampling_compute(l2, 0, true), 0.0);
  EXPECT_DOUBLE_EQ(sampling_compute(10.0, 100, true), 2.0 * sampling_compute(10.0, 100, false));
}

TEST(AnalysisCompute, RoundSignificant) {
  EXPECT_DOUBLE_EQ(round_significant(80.71, 3), 80.7);
  EXPECT_DOUBLE_EQ(round_significant(0.0012345, 2), 0.0012);
  EXPECT_DOUBLE_EQ(round_significant(15186.0, 3), 15200.0);
  EXPECT_EQ(round_significant(0.0, 3), 0.0);
}

TEST(AnalysisConformance, EveryRowPasses) {
  const auto rows = conformance_table();
  ASSERT_GE(rows.size(), 17u);
  for (const auto& r : rows) {
    EXPECT_TRUE(r.pass) << r.table << ' ' << r.model << ' ' << r.variant << ' ' << r.quantity << ": " << r.computed
                        << " vs " << r.reference;
  }
}
