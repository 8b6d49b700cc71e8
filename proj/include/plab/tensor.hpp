#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace plab {

std::int64_t shape_numel(std::span<const int> shape);
std::string shape_str(std::span<const int> shape);

/// Dense row-major float32 array. All arithmetic in this project is float32;
/// accumulation is float32 as well, which is adequate at the problem sizes
/// the tools target.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<float> d);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor from(std::initializer_list<float> values);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  float& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
};

float max_abs(const Tensor& t);
float linf_dist(const Tensor& a, const Tensor& b);
float l2_dist(const Tensor& a, const Tensor& b);
Tensor clamp01(const Tensor& t);

/// Parameter checkpoint file: magic "PLAB", version u32, tensor count u32,
/// then per tensor a rank u32, dims u32[rank], and a little-endian float32
/// payload. Byte layout is fixed, independent of the host.
void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace plab
