#include "dit/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dit/errors.hpp"

namespace dit {

static_assert(std::endian::native == std::endian::little, "tensor container assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'I', 'T', 'T', 'N', 'S', 'R', '1'};

template <typename V>
void write_pod(std::vector<std::uint8_t>& out, V value) {
  std::uint8_t buf[sizeof(V)];
  std::memcpy(buf, &value, sizeof(V));
  out.insert(out.end(), buf, buf + sizeof(V));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename V>
  V pod() {
    V v;
    std::memcpy(&v, take(sizeof(V)).data(), sizeof(V));
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("tensor container truncated");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename V>
std::vector<std::uint8_t> to_bytes(std::span<const V> values) {
  std::vector<std::uint8_t> out(values.size() * sizeof(V));
  if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

template <typename V>
std::vector<V> from_bytes(const std::vector<std::uint8_t>& payload) {
  std::vector<V> out(payload.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), payload.data(), payload.size());
  return out;
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI64: return 8;
  }
  throw FormatError("unknown dtype tag");
}

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI64: return "i64";
  }
  return "?";
}

void TensorArchive::add(StoredTensor entry) {
  if (contains(entry.name)) throw FormatError("duplicate tensor name '" + entry.name + "'");
  entries_.push_back(std::move(entry));
}

template <typename T>
void TensorArchive::put(const std::string& name, const Tensor<T>& tensor) {
  add({name, std::is_same_v<T, float> ? DType::kF32 : DType::kF64, tensor.shape(), to_bytes(tensor.data())});
}

void TensorArchive::put_f64(const std::string& name, Shape shape, std::span<const double> values) {
  if (shape_numel(shape) != values.size()) throw ShapeError("put_f64: shape does not match value count");
  add({name, DType::kF64, std::move(shape), to_bytes(values)});
}

void TensorArchive::put_i64(const std::string& name, Shape shape, std::span<const std::int64_t> values) {
  if (shape_numel(shape) != values.size()) throw ShapeError("put_i64: shape does not match value count");
  add({name, DType::kI64, std::move(shape), to_bytes(values)});
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const StoredTensor& TensorArchive::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw FormatError("tensor '" + name + "' not found in container");
}

template <typename T>
Tensor<T> TensorArchive::get(const std::string& name) const {
  const auto& e = at(name);
  std::vector<T> values;
  switch (e.dtype) {
    case DType::kF32: {
      auto v = from_bytes<float>(e.payload);
      values.assign(v.begin(), v.end());
      break;
    }
    case DType::kF64: {
      auto v = from_bytes<double>(e.payload);
      values.assign(v.begin(), v.end());
      break;
    }
    case DType::kI64: throw FormatError("tensor '" + name + "' is integer-typed");
  }
  return Tensor<T>(e.shape, std::move(values));
}

std::vector<double> TensorArchive::get_f64(const std::string& name) const {
  const auto t = get<double>(name);
  return {t.data().begin(), t.data().end()};
}

std::vector<std::int64_t> TensorArchive::get_i64(const std::string& name) const {
  const auto& e = at(name);
  if (e.dtype != DType::kI64) throw FormatError("tensor '" + name + "' is not integer-typed");
  return from_bytes<std::int64_t>(e.payload);
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  write_pod<std::uint64_t>(out, metadata.size());
  out.insert(out.end(), metadata.begin(), metadata.end());
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto extent : e.shape) write_pod<std::uint64_t>(out, extent);
    write_pod<std::uint64_t>(out, e.payload.size());
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("not a tensor container (bad magic)");
  TensorArchive archive;
  const auto meta_len = in.pod<std::uint64_t>();
  auto meta = in.take(meta_len);
  archive.metadata.assign(meta.begin(), meta.end());
  const auto count = in.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor e;
    const auto name_len = in.pod<std::uint32_t>();
    auto name = in.take(name_len);
    e.name.assign(name.begin(), name.end());
    const auto tag = in.pod<std::uint8_t>();
    if (tag < 1 || tag > 3) throw FormatError("unknown dtype tag " + std::to_string(tag) + " for '" + e.name + "'");
    e.dtype = static_cast<DType>(tag);
    const auto rank = in.pod<std::uint32_t>();
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.pod<std::uint64_t>());
    const auto nbytes = in.pod<std::uint64_t>();
    if (nbytes != shape_numel(e.shape) * dtype_size(e.dtype)) {
      throw FormatError("payload size mismatch for '" + e.name + "'");
    }
    auto payload = in.take(nbytes);
    e.payload.assign(payload.begin(), payload.end());
    archive.add(std::move(e));
  }
  if (!in.done()) throw FormatError("trailing bytes after tensor container");
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("short write to '" + path.string() + "'");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

template void TensorArchive::put<float>(const std::string&, const Tensor<float>&);
template void TensorArchive::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> TensorArchive::get<float>(const std::string&) const;
template Tensor<double> TensorArchive::get<double>(const std::string&) const;

}  // namespace dit
