#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plab/graph.hpp"

namespace plab {

enum class NetKind { kMlp, kF2Binary, kSmallCnn };

NetKind net_kind_from_string(const std::string& s);
std::string to_string(NetKind k);

/// Describes one of the three network families the tools build. Width and
/// depth apply to the MLP family; the binary two-layer net forces classes=2.
struct NetworkSpec {
  NetKind kind = NetKind::kMlp;
  int width = 32;
  int depth = 2;
  int in_c = 1;
  int in_h = 1;
  int in_w = 1;
  int classes = 2;

  std::int64_t input_dim() const { return static_cast<std::int64_t>(in_c) * in_h * in_w; }
  void validate() const;
};

/// `depth` hidden ReLU layers of `width` units, then a linear head of size
/// `classes` and a softmax. He initialization scaled by fan-in, seeded.
Graph build_mlp(const NetworkSpec& spec, std::uint64_t seed);

/// conv(64, 3x3, pad 1) -> ReLU -> maxpool 2x2 -> flatten -> fc(2) -> softmax.
/// Supported inputs: 3x32x32 (flatten 16384) and 1x28x28 (flatten 12544).
Graph build_f2_binary(int in_c, int in_h, int in_w, std::uint64_t seed);

/// Two conv blocks (conv-relu-pool) and one fully connected head; the small
/// stand-in for a victim CNN. Channels follow `width` (first block) and
/// 2*width (second block).
Graph build_small_cnn(const NetworkSpec& spec, std::uint64_t seed);

Graph build_network(const NetworkSpec& spec, std::uint64_t seed);

/// Index of the largest output component, 0-based; ties go to the lowest
/// index. Reports that surface labels to users print them 1-based to match
/// label sets {1,...,m}; everything in memory is 0-based.
int classify(const Graph& net, const Tensor& x);
std::vector<int> classify_batch(const Graph& net, const Tensor& batch);
int argmax_row(const float* row, int m);

}  // namespace plab
