#pragma once

// Named-tensor container used for checkpoints, sample dumps, cached feature
// statistics and test fixtures.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "DITTNSR1"
//   meta_len   u64, followed by meta_len bytes of UTF-8 metadata (JSON text)
//   count      u32
//   count x entry:
//     name_len u32, name bytes
//     dtype    u8   (1 = f32, 2 = f64, 3 = i64)
//     rank     u32, rank x u64 extents
//     nbytes   u64, payload (row-major, little-endian)

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dit/tensor.hpp"

namespace dit {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kI64 = 3 };

std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);

struct StoredTensor {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

class TensorArchive {
 public:
  std::string metadata;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& tensor);
  void put_f64(const std::string& name, Shape shape, std::span<const double> values);
  void put_i64(const std::string& name, Shape shape, std::span<const std::int64_t> values);

  bool contains(const std::string& name) const;
  const StoredTensor& at(const std::string& name) const;
  /// Reads an entry as Tensor<T>, converting float/double as needed.
  template <typename T>
  Tensor<T> get(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<std::int64_t> get_i64(const std::string& name) const;

  const std::vector<StoredTensor>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  void add(StoredTensor entry);
  std::vector<StoredTensor> entries_;
};

extern template void TensorArchive::put<float>(const std::string&, const Tensor<float>&);
extern template void TensorArchive::put<double>(const std::string&, const Tensor<double>&);
extern template Tensor<float> TensorArchive::get<float>(const std::string&) const;
extern template Tensor<double> TensorArchive::get<double>(const std::string&) const;

}  // namespace dit
