#include "plab/model_zoo.hpp"

#include <cmath>
#include <stdexcept>

#include "plab/rng.hpp"

namespace plab {

NetKind net_kind_from_string(const std::string& s) {
  if (s == "mlp") return NetKind::kMlp;
  if (s == "f2_binary") return NetKind::kF2Binary;
  if (s == "small_cnn") return NetKind::kSmallCnn;
  throw std::invalid_argument("unknown network kind: " + s);
}

std::string to_string(NetKind k) {
  switch (k) {
    case NetKind::kMlp: return "mlp";
    case NetKind::kF2Binary: return "f2_binary";
    case NetKind::kSmallCnn: return "small_cnn";
  }
  return "?";
}

void NetworkSpec::validate() const {
  if (width < 1 || depth < 1) throw std::invalid_argument("network spec: width and depth must be >= 1");
  if (classes < 2) throw std::invalid_argument("network spec: need at least 2 classes");
  if (in_c < 1 || in_h < 1 || in_w < 1) throw std::invalid_argument("network spec: bad input dims");
  if (kind == NetKind::kF2Binary && classes != 2)
    throw std::invalid_argument("network spec: f2_binary is a binary classifier");
}

namespace {

Tensor he_init(std::vector<int> shape, std::int64_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const float s = std::sqrt(2.f / static_cast<float>(fan_in));
  for (float& v : t.data) v = s * rng.normal();
  return t;
}

int dense_block(Graph& g, int x, int in_dim, int out_dim, Rng& rng) {
  int w = g.add_param(he_init({in_dim, out_dim}, in_dim, rng));
  int b = g.add_param(Tensor::zeros({out_dim}));
  return g.add_bias(g.matmul(x, w), b);
}

int conv_block(Graph& g, int x, int in_c, int out_c, Rng& rng) {
  int w = g.add_param(he_init({out_c, in_c, 3, 3}, static_cast<std::int64_t>(in_c) * 9, rng));
  int b = g.add_param(Tensor::zeros({out_c}));
  return g.maxpool2(g.relu(g.add_bias(g.conv3x3(x, w), b)));
}

void finish(Graph& g, int logits) {
  int probs = g.softmax(logits);
  g.set_output(probs);
  g.set_loss(g.cross_entropy(probs));
}

}  // namespace

Graph build_mlp(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != NetKind::kMlp) throw std::invalid_argument("build_mlp: spec kind is not mlp");
  Rng rng(seed);
  Graph g;
  const int dim0 = static_cast<int>(spec.input_dim());
  int x = g.add_input({spec.in_c, spec.in_h, spec.in_w});
  int h = g.reshape(x, {dim0});
  int dim = dim0;
  for (int layer = 0; layer < spec.depth; ++layer) {
    h = g.relu(dense_block(g, h, dim, spec.width, rng));
    dim = spec.width;
  }
  finish(g, dense_block(g, h, dim, spec.classes, rng));
  return g;
}

Graph build_f2_binary(int in_c, int in_h, int in_w, std::uint64_t seed) {
  const bool ok = (in_c == 3 && in_h == 32 && in_w == 32) || (in_c == 1 && in_h == 28 && in_w == 28);
  if (!ok)
    throw std::invalid_argument("build_f2_binary: unsupported input shape " +
                                shape_str(std::vector<int>{in_c, in_h, in_w}));
  Rng rng(seed);
  Graph g;
  int x = g.add_input({in_c, in_h, in_w});
  int w = g.add_param(he_init({64, in_c, 3, 3}, static_cast<std::int64_t>(in_c) * 9, rng));
  int b = g.add_param(Tensor::zeros({64}));
  int pooled = g.maxpool2(g.relu(g.add_bias(g.conv3x3(x, w), b)));
  const int flat = 64 * (in_h / 2) * (in_w / 2);
  int fc_in = g.reshape(pooled, {flat});
  finish(g, dense_block(g, fc_in, flat, 2, rng));
  return g;
}

Graph build_small_cnn(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != NetKind::kSmallCnn) throw std::invalid_argument("build_small_cnn: wrong kind");
  if (spec.in_h % 4 != 0 || spec.in_w % 4 != 0)
    throw std::invalid_argument("build_small_cnn: spatial dims must be divisible by 4");
  Rng rng(seed);
  Graph g;
  int x = g.add_input({spec.in_c, spec.in_h, spec.in_w});
  int c1 = spec.width;
  int c2 = 2 * spec.width;
  int h = conv_block(g, x, spec.in_c, c1, rng);
  h = conv_block(g, h, c1, c2, rng);
  const int flat = c2 * (spec.in_h / 4) * (spec.in_w / 4);
  int fc_in = g.reshape(h, {flat});
  finish(g, dense_block(g, fc_in, flat, spec.classes, rng));
  return g;
}

Graph build_network(const NetworkSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case NetKind::kMlp: return build_mlp(spec, seed);
    case NetKind::kF2Binary: return build_f2_binary(spec.in_c, spec.in_h, spec.in_w, seed);
    case NetKind::kSmallCnn: return build_small_cnn(spec, seed);
  }
  throw std::invalid_argument("build_network: bad kind");
}

int argmax_row(const float* row, int m) {
  int best = 0;
  for (int j = 1; j < m; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

int classify(const Graph& net, const Tensor& x) {
  EvalWorkspace ws;
  Tensor out = forward(net, x, ws);
  const int m = out.shape.back();
  return argmax_row(out.data.data(), m);
}

std::vector<int> classify_batch(const Graph& net, const Tensor& batch) {
  EvalWorkspace ws;
  Tensor out = forward(net, batch, ws);
  const int m = out.shape.back();
  const int B = out.shape[0];
  std::vector<int> labels(static_cast<std::size_t>(B));
  for (int bi = 0; bi < B; ++bi)
    labels[static_cast<std::size_t>(bi)] = argmax_row(out.data.data() + static_cast<std::int64_t>(bi) * m, m);
  return labels;
}

}  // namespace plab
