#pragma once

// Closed-form forward-pass cost and parameter counts.
//
// Flops follow the multiply-accumulate convention (1 MAC = 1 flop) over every
// linear map, including conditioning MLPs and both attention matmuls.
// Normalizations, activations, softmax and embedding lookups count zero.

#include <cstdint>
#include <string>
#include <vector>

#include "dit/config.hpp"

namespace dit {

struct CostComponent {
  std::string name;
  std::uint64_t count = 0;  // per block when per_block is set
  bool per_block = false;
};

struct FlopReport {
  DiTConfig config;
  std::uint64_t sequence_length = 0;  // tokens seen by each block
  int blocks = 0;
  std::vector<CostComponent> components;

  std::uint64_t total() const;
  /// Attention projections, attention matmuls and MLP over all blocks.
  std::uint64_t transformer_core() const;
  std::uint64_t component_total(const std::string& name) const;
  double gflops() const { return static_cast<double>(total()) * 1e-9; }
};

struct ParamReport {
  DiTConfig config;
  int blocks = 0;
  std::vector<CostComponent> components;

  std::uint64_t total() const;
  std::uint64_t component_total(const std::string& name) const;
  double millions() const { return static_cast<double>(total()) * 1e-6; }
};

FlopReport count_flops(const DiTConfig& config);
ParamReport count_params(const DiTConfig& config);

/// gflops * batch * steps * 3 (backward counted as twice the forward).
double training_compute(double gflops_per_forward, std::uint64_t batch, std::uint64_t steps);
/// Tflops to sample one image: gflops * steps, doubled under guidance.
double sampling_compute(double gflops_per_forward, std::uint64_t num_steps, bool guided);

struct ConformanceRow {
  std::string table;     // "table1", "table4" or "compute"
  std::string model;     // e.g. "XL/2"
  std::string variant;
  int image_size = 256;
  std::string quantity;  // "gflops", "params_m" or "sample_tflops"
  double computed = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;  // relative; 0 means "equal to 3 significant figures"
  bool pass = false;

  double relative_error() const;
};

/// Every published model-size row, recomputed.
std::vector<ConformanceRow> conformance_table();

/// Rounds to `digits` significant figures.
double round_significant(double value, int digits);

}  // namespace dit
