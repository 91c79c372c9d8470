#include "dit/analysis.hpp"

#include <cmath>

#include "dit/errors.hpp"

namespace dit {

namespace {

using u64 = std::uint64_t;

u64 sum_components(const std::vector<CostComponent>& parts, int blocks) {
  u64 n = 0;
  for (const auto& c : parts) n += c.per_block ? c.count * static_cast<u64>(blocks) : c.count;
  return n;
}

u64 find_component(const std::vector<CostComponent>& parts, int blocks, const std::string& name) {
  for (const auto& c : parts) {
    if (c.name == name) return c.per_block ? c.count * static_cast<u64>(blocks) : c.count;
  }
  throw IndexError("no cost component named '" + name + "'");
}

bool adaptive(BlockVariant v) { return v == BlockVariant::kAdaLN || v == BlockVariant::kAdaLNZero; }

}  // namespace

u64 FlopReport::total() const { return sum_components(components, blocks); }
u64 FlopReport::component_total(const std::string& name) const { return find_component(components, blocks, name); }
u64 FlopReport::transformer_core() const {
  return component_total("attention_projections") + component_total("attention_matmuls") + component_total("mlp");
}

u64 ParamReport::total() const { return sum_components(components, blocks); }
u64 ParamReport::component_total(const std::string& name) const { return find_component(components, blocks, name); }

FlopReport count_flops(const DiTConfig& config) {
  config.validate();
  const u64 d = static_cast<u64>(config.hidden), p = static_cast<u64>(config.patch);
  const u64 c = static_cast<u64>(config.channels), tokens = static_cast<u64>(config.tokens());
  const u64 seq = config.variant == BlockVariant::kInContext ? tokens + 2 : tokens;
  const u64 freq = kTimestepFrequencyDim;

  FlopReport r;
  r.config = config;
  r.sequence_length = seq;
  r.blocks = config.depth;
  u64 conditioning = 0;
  if (config.variant == BlockVariant::kAdaLNZero) conditioning = 6 * d * d;
  if (config.variant == BlockVariant::kAdaLN) conditioning = 4 * d * d;
  // Cross-attention: query and output projections over the image tokens, key
  // and value projections over the two conditioning tokens, and the score and
  // weighted-value products against those two tokens.
  const u64 cross = config.variant == BlockVariant::kCrossAttention ? 2 * tokens * d * d + 4 * d * d + 4 * tokens * d : 0;
  const u64 final_modulation = adaptive(config.variant) ? 2 * d * d : 0;
  r.components = {
      {"patch_embed", tokens * p * p * c * d, false},
      {"attention_projections", 4 * seq * d * d, true},
      {"attention_matmuls", 2 * seq * seq * d, true},
      {"mlp", 8 * seq * d * d, true},
      {"conditioning_mlp", conditioning, true},
      {"cross_attention", cross, true},
      {"timestep_embedder", freq * d + d * d, false},
      {"label_lookup", 0, false},
      {"final_layer", tokens * d * p * p * 2 * c + final_modulation, false},
  };
  return r;
}

ParamReport count_params(const DiTConfig& config) {
  config.validate();
  const u64 d = static_cast<u64>(config.hidden), p = static_cast<u64>(config.patch);
  const u64 c = static_cast<u64>(config.channels), k = static_cast<u64>(config.num_classes);
  const u64 freq = kTimestepFrequencyDim;
  const u64 out = p * p * 2 * c;

  u64 conditioning = 0, norms = 0, cross = 0;
  switch (config.variant) {
    case BlockVariant::kAdaLNZero: conditioning = 6 * d * d + 6 * d; break;
    case BlockVariant::kAdaLN: conditioning = 4 * d * d + 4 * d; break;
    case BlockVariant::kInContext: norms = 2 * 2 * d; break;
    case BlockVariant::kCrossAttention:
      norms = 4 * 2 * d;
      cross = 4 * (d * d + d);
      break;
  }
  const u64 final_head = adaptive(config.variant) ? 2 * d * d + 2 * d : 2 * d;

  ParamReport r;
  r.config = config;
  r.blocks = config.depth;
  r.components = {
      {"patch_embed", p * p * c * d + d, false},
      {"timestep_embedder", freq * d + d + d * d + d, false},
      {"label_embedding", (k + 1) * d, false},
      {"attention", 4 * d * d + 4 * d, true},
      {"mlp", 8 * d * d + 5 * d, true},
      {"conditioning_mlp", conditioning, true},
      {"norms", norms, true},
      {"cross_attention", cross, true},
      {"final_layer", final_head + d * out + out, false},
  };
  return r;
}

double training_compute(double gflops_per_forward, std::uint64_t batch, std::uint64_t steps) {
  return gflops_per_forward * static_cast<double>(batch) * static_cast<double>(steps) * 3.0;
}

double sampling_compute(double gflops_per_forward, std::uint64_t num_steps, bool guided) {
  return gflops_per_forward * static_cast<double>(num_steps) * (guided ? 2.0 : 1.0) / 1000.0;
}

double round_significant(double value, int digits) {
  if (value == 0.0 || !std::isfinite(value)) return value;
  const double magnitude = std::floor(std::log10(std::fabs(value)));
  const double factor = std::pow(10.0, digits - 1 - magnitude);
  return std::round(value * factor) / factor;
}

double ConformanceRow::relative_error() const {
  return reference == 0.0 ? std::fabs(computed) : std::fabs(computed - reference) / std::fabs(reference);
}

std::vector<ConformanceRow> conformance_table() {
  std::vector<ConformanceRow> rows;
  auto add = [&](std::string table, std::string model, BlockVariant v, int image, std::string quantity, double computed,
                 double reference, double tol) {
    ConformanceRow r{std::move(table), std::move(model), std::string(variant_name(v)), image, std::move(quantity),
                     computed, reference, tol, false};
    r.pass = tol > 0.0 ? r.relative_error() <= tol
                       : round_significant(computed, 3) == round_significant(reference, 3);
    rows.push_back(std::move(r));
  };
  auto model = [](const std::string& name, BlockVariant v, int image) {
    auto c = named_config(name, image / 8);
    c.variant = v;
    return c;
  };
  const auto z = BlockVariant::kAdaLNZero;

  const std::pair<const char*, double> table1[] = {{"S/4", 1.4}, {"B/4", 5.6}, {"L/4", 19.7}, {"XL/4", 29.1}};
  for (const auto& [name, g] : table1) add("table1", name, z, 256, "gflops", count_flops(model(name, z, 256)).gflops(), g, 0.02);

  struct Row {
    const char* name;
    BlockVariant variant;
    int image;
    double gflops;
    double params_m;
  };
  const Row table4[] = {
      {"S/8", z, 256, 0.36, 33},
      {"S/4", z, 256, 1.41, 33},
      {"S/2", z, 256, 6.06, 33},
      {"B/8", z, 256, 1.42, 131},
      {"B/4", z, 256, 5.56, 130},
      {"B/2", z, 256, 23.01, 130},
      {"L/8", z, 256, 5.01, 459},
      {"L/4", z, 256, 19.70, 458},
      {"L/2", z, 256, 80.71, 458},
      {"XL/8", z, 256, 7.39, 676},
      {"XL/4", z, 256, 29.05, 675},
      {"XL/2", z, 256, 118.64, 675},
      {"XL/2", BlockVariant::kInContext, 256, 119.37, 449},
      {"XL/2", BlockVariant::kCrossAttention, 256, 137.62, 598},
      {"XL/2", BlockVariant::kAdaLN, 256, 118.56, 600},
      {"XL/2", z, 512, 524.60, 675},
  };
  for (const auto& r : table4) {
    const auto c = model(r.name, r.variant, r.image);
    add("table4", r.name, r.variant, r.image, "gflops", count_flops(c).gflops(), r.gflops, 0.01);
    add("table4", r.name, r.variant, r.image, "params_m", count_params(c).millions(), r.params_m, 0.02);
  }

  add("compute", "L/2", z, 256, "sample_tflops", sampling_compute(count_flops(model("L/2", z, 256)).gflops(), 1000, false),
      80.7, 0.0);
  add("compute", "XL/2", z, 256, "sample_tflops", sampling_compute(count_flops(model("XL/2", z, 256)).gflops(), 128, false),
      15.2, 0.0);
  return rows;
}

}  // namespace dit
