#include "dualobs/core/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace dualobs {
namespace {

using nlohmann::json;

const char* dtype_name(Tensor::DType d) { return d == Tensor::DType::kFloat32 ? "float32" : "int32"; }

Tensor::DType parse_dtype(const std::string& s) {
  if (s == "float32") return Tensor::DType::kFloat32;
  if (s == "int32") return Tensor::DType::kInt32;
  throw FormatError("unsupported dtype '" + s + "'");
}

template <class T>
void write_le(std::ofstream& out, const std::vector<T>& v) {
  static_assert(sizeof(T) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
  } else {
    for (T x : v) {
      auto u = std::bit_cast<std::uint32_t>(x);
      u = __builtin_bswap32(u);
      out.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
}

template <class T>
void read_le(std::ifstream& in, std::vector<T>& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
  if (!in) throw FormatError(path + ": truncated tensor data");
  if constexpr (std::endian::native != std::endian::little) {
    for (T& x : v) x = std::bit_cast<T>(__builtin_bswap32(std::bit_cast<std::uint32_t>(x)));
  }
}

}  // namespace

Tensor Tensor::floats(std::vector<std::int64_t> shape, std::vector<float> values) {
  Tensor t;
  t.dtype = DType::kFloat32;
  t.shape = std::move(shape);
  t.f32 = std::move(values);
  if (static_cast<std::int64_t>(t.f32.size()) != t.numel())
    throw std::invalid_argument("Tensor::floats: value count does not match shape");
  return t;
}

Tensor Tensor::ints(std::vector<std::int64_t> shape, std::vector<std::int32_t> values) {
  Tensor t;
  t.dtype = DType::kInt32;
  t.shape = std::move(shape);
  t.i32 = std::move(values);
  if (static_cast<std::int64_t>(t.i32.size()) != t.numel())
    throw std::invalid_argument("Tensor::ints: value count does not match shape");
  return t;
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

void write_tensors(const std::filesystem::path& path, const TensorMap& tensors) {
  json header;
  header["version"] = kTensorFormatVersion;
  header["tensors"] = json::array();
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape}});
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kTensorMagic, sizeof(kTensorMagic));
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  for (const auto& [name, t] : tensors) {
    if (t.dtype == Tensor::DType::kFloat32)
      write_le(out, t.f32);
    else
      write_le(out, t.i32);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TensorMap read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kTensorMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
    throw FormatError(path.string() + ": bad magic");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  if (header.value("version", -1) != kTensorFormatVersion)
    throw FormatError(path.string() + ": unsupported version");
  TensorMap out;
  for (const auto& entry : header.at("tensors")) {
    Tensor t;
    t.dtype = parse_dtype(entry.at("dtype").get<std::string>());
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    for (auto s : t.shape)
      if (s < 0) throw FormatError(path.string() + ": negative dimension");
    const auto n = static_cast<std::size_t>(t.numel());
    if (t.dtype == Tensor::DType::kFloat32) {
      t.f32.resize(n);
      read_le(in, t.f32, path.string());
    } else {
      t.i32.resize(n);
      read_le(in, t.i32, path.string());
    }
    out.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return out;
}

const Tensor& require_tensor(const TensorMap& m, const std::string& name, Tensor::DType dtype,
                             std::size_t rank, const std::string& context) {
  auto it = m.find(name);
  if (it == m.end()) throw FormatError(context + ": missing tensor '" + name + "'");
  if (it->second.dtype != dtype) throw FormatError(context + ": tensor '" + name + "' has wrong dtype");
  if (it->second.shape.size() != rank)
    throw FormatError(context + ": tensor '" + name + "' has rank " +
                      std::to_string(it->second.shape.size()) + ", expected " + std::to_string(rank));
  return it->second;
}

}  // namespace dualobs
