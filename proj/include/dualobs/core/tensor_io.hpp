#pragma once

// Binary tensor container shared by datasets and checkpoints.
//
// Layout: 8-byte magic "SPRS2DNS", one line of JSON
//   {"version":1,"tensors":[{"name":..,"dtype":"float32"|"int32","shape":[..]}, ...]}
// terminated by '\n', then each tensor's elements in order, little-endian,
// C-order, without padding.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualobs {

inline constexpr char kTensorMagic[8] = {'S', 'P', 'R', 'S', '2', 'D', 'N', 'S'};
inline constexpr int kTensorFormatVersion = 1;

struct Tensor {
  enum class DType { kFloat32, kInt32 };

  DType dtype = DType::kFloat32;
  std::vector<std::int64_t> shape;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;

  static Tensor floats(std::vector<std::int64_t> shape, std::vector<float> values);
  static Tensor ints(std::vector<std::int64_t> shape, std::vector<std::int32_t> values);

  std::int64_t numel() const;
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensors are written in key order, so equal maps give equal bytes.
using TensorMap = std::map<std::string, Tensor>;

void write_tensors(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap read_tensors(const std::filesystem::path& path);

/// Fetches a tensor and checks its dtype and rank.
const Tensor& require_tensor(const TensorMap& m, const std::string& name, Tensor::DType dtype,
                             std::size_t rank, const std::string& context);

}  // namespace dualobs
