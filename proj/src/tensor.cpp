#include "plab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace plab {

std::int64_t shape_numel(std::span<const int> shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(std::span<const int> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(std::vector<int> shape) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.f));
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<float>(values));
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

float max_abs(const Tensor& t) {
  float m = 0.f;
  for (float v : t.data) m = std::max(m, std::abs(v));
  return m;
}

float linf_dist(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("linf_dist: shape mismatch");
  float m = 0.f;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

float l2_dist(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("l2_dist: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    s += d * d;
  }
  return static_cast<float>(std::sqrt(s));
}

Tensor clamp01(const Tensor& t) {
  Tensor out = t;
  for (float& v : out.data) v = std::clamp(v, 0.f, 1.f);
  return out;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

float get_f32(std::istream& is) {
  std::uint32_t v = get_u32(is);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write("PLAB", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (float f : t.data) put_f32(os, f);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PLAB", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t count = get_u32(is);
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t rank = get_u32(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(is));
    auto n = shape_numel(shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& f : data) f = get_f32(is);
    if (!is) throw std::runtime_error("checkpoint: truncated payload in " + path.string());
    out.emplace_back(std::move(shape), std::move(data));
  }
  return out;
}

}  // namespace plab
