#include "plab/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace plab {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatrixRM>;
using MapCM = Eigen::Map<const MatrixRM>;

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kMatMul: return "matmul";
    case Op::kConv3x3: return "conv3x3";
    case Op::kRelu: return "relu";
    case Op::kMaxPool2: return "maxpool2";
    case Op::kAddBias: return "add_bias";
    case Op::kSoftmax: return "softmax";
    case Op::kCrossEntropy: return "cross_entropy";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kClamp: return "clamp";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("graph: " + msg); }

}  // namespace

const Node& Graph::at(int id, const char* ctx) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    fail(std::string(ctx) + ": node id " + std::to_string(id) + " out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

bool Graph::batched(int id) const { return nodes_[static_cast<std::size_t>(id)].batched; }

int Graph::add_input(std::vector<int> shape) {
  if (input_ >= 0) fail("graph already has an input node");
  if (shape_numel(shape) <= 0) fail("input shape must be non-empty");
  Node n{Op::kInput, {-1, -1}, std::move(shape)};
  n.batched = true;
  input_ = push(std::move(n));
  return input_;
}

int Graph::add_param(Tensor init) {
  Node n{Op::kParam, {-1, -1}, init.shape};
  n.param_slot = static_cast<int>(params_.size());
  params_.push_back(std::move(init));
  int id = push(std::move(n));
  param_nodes_.push_back(id);
  return id;
}

int Graph::matmul(int x, int w) {
  const Node& nx = at(x, "matmul");
  const Node& nw = at(w, "matmul");
  if (nx.shape.size() != 1) fail("matmul expects a flat left operand, got " + shape_str(nx.shape));
  if (nw.op != Op::kParam || nw.shape.size() != 2) fail("matmul weight must be a rank-2 param");
  if (nx.shape[0] != nw.shape[0])
    fail("matmul inner dims differ: " + shape_str(nx.shape) + " vs " + shape_str(nw.shape));
  if (!nx.batched) fail("matmul left operand must derive from the input");
  Node n{Op::kMatMul, {x, w}, {nw.shape[1]}};
  n.batched = true;
  return push(std::move(n));
}

int Graph::conv3x3(int x, int w) {
  const Node& nx = at(x, "conv3x3");
  const Node& nw = at(w, "conv3x3");
  if (nx.shape.size() != 3) fail("conv3x3 expects [C,H,W] input, got " + shape_str(nx.shape));
  if (nw.op != Op::kParam || nw.shape.size() != 4 || nw.shape[2] != 3 || nw.shape[3] != 3)
    fail("conv3x3 weight must be a [K,C,3,3] param");
  if (nw.shape[1] != nx.shape[0]) fail("conv3x3 channel mismatch");
  if (!nx.batched) fail("conv3x3 input must derive from the input");
  Node n{Op::kConv3x3, {x, w}, {nw.shape[0], nx.shape[1], nx.shape[2]}};
  n.batched = true;
  return push(std::move(n));
}

int Graph::add_bias(int x, int bias) {
  const Node& nx = at(x, "add_bias");
  const Node& nb = at(bias, "add_bias");
  if (nb.op != Op::kParam || nb.shape.size() != 1) fail("bias must be a rank-1 param");
  if (nx.shape.size() == 1) {
    if (nx.shape[0] != nb.shape[0]) fail("bias length mismatch");
  } else if (nx.shape.size() == 3) {
    if (nx.shape[0] != nb.shape[0]) fail("bias must have one entry per channel");
  } else {
    fail("add_bias expects [F] or [C,H,W] input");
  }
  if (!nx.batched) fail("add_bias input must derive from the input");
  Node n{Op::kAddBias, {x, bias}, nx.shape};
  n.batched = true;
  return push(std::move(n));
}

int Graph::relu(int x) {
  const Node& nx = at(x, "relu");
  Node n{Op::kRelu, {x, -1}, nx.shape};
  n.batched = nx.batched;
  return push(std::move(n));
}

int Graph::maxpool2(int x) {
  const Node& nx = at(x, "maxpool2");
  if (nx.shape.size() != 3) fail("maxpool2 expects [C,H,W] input");
  if (nx.shape[1] % 2 != 0 || nx.shape[2] % 2 != 0) fail("maxpool2 needs even spatial dims");
  if (!nx.batched) fail("maxpool2 input must derive from the input");
  Node n{Op::kMaxPool2, {x, -1}, {nx.shape[0], nx.shape[1] / 2, nx.shape[2] / 2}};
  n.batched = true;
  return push(std::move(n));
}

int Graph::softmax(int x) {
  const Node& nx = at(x, "softmax");
  if (nx.shape.size() != 1) fail("softmax expects a flat input");
  if (!nx.batched) fail("softmax input must derive from the input");
  Node n{Op::kSoftmax, {x, -1}, nx.shape};
  n.batched = true;
  return push(std::move(n));
}

int Graph::cross_entropy(int softmax_node) {
  const Node& ns = at(softmax_node, "cross_entropy");
  if (ns.op != Op::kSoftmax) fail("cross_entropy input must be a softmax node");
  return push({Op::kCrossEntropy, {softmax_node, -1}, {1}});  // scalar reduction, unbatched
}

int Graph::add(int x, int y) {
  const Node& nx = at(x, "add");
  const Node& ny = at(y, "add");
  if (nx.shape != ny.shape) fail("add shape mismatch");
  if (!nx.batched && ny.batched) std::swap(x, y);  // broadcast side goes second
  Node n{Op::kAdd, {x, y}, nx.shape};
  n.batched = nx.batched || ny.batched;
  return push(std::move(n));
}

int Graph::mul(int x, int y) {
  const Node& nx = at(x, "mul");
  const Node& ny = at(y, "mul");
  if (nx.shape != ny.shape) fail("mul shape mismatch");
  if (!nx.batched && ny.batched) std::swap(x, y);
  Node n{Op::kMul, {x, y}, nx.shape};
  n.batched = nx.batched || ny.batched;
  return push(std::move(n));
}

int Graph::scale(int x, float c) {
  const Node& nx = at(x, "scale");
  Node n{Op::kScale, {x, -1}, nx.shape};
  n.a = c;
  n.batched = nx.batched;
  return push(std::move(n));
}

int Graph::clamp(int x, float lo, float hi) {
  if (!(lo <= hi)) fail("clamp bounds out of order");
  const Node& nx = at(x, "clamp");
  Node n{Op::kClamp, {x, -1}, nx.shape};
  n.a = lo;
  n.b = hi;
  n.batched = nx.batched;
  return push(std::move(n));
}

int Graph::reshape(int x, std::vector<int> shape) {
  const Node& nx = at(x, "reshape");
  if (shape_numel(shape) != shape_numel(nx.shape)) fail("reshape element count mismatch");
  Node n{Op::kReshape, {x, -1}, std::move(shape)};
  n.batched = nx.batched;
  return push(std::move(n));
}

void Graph::set_output(int node) {
  at(node, "set_output");
  output_ = node;
}

void Graph::set_loss(int node) {
  at(node, "set_loss");
  loss_ = node;
}

const Tensor& Graph::param_of(int node) const {
  const Node& n = at(node, "param_of");
  if (n.op != Op::kParam) fail("param_of: not a param node");
  return params_[static_cast<std::size_t>(n.param_slot)];
}

std::int64_t Graph::param_count() const {
  std::int64_t n = 0;
  for (const Tensor& p : params_) n += p.numel();
  return n;
}

void Graph::save_params(const std::filesystem::path& path) const { save_tensors(path, params_); }

void Graph::load_params(const std::filesystem::path& path) {
  auto loaded = load_tensors(path);
  if (loaded.size() != params_.size()) fail("load_params: tensor count mismatch");
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    if (loaded[i].shape != params_[i].shape) fail("load_params: shape mismatch at tensor " + std::to_string(i));
  }
  params_ = std::move(loaded);
}

namespace {

std::vector<int> batched_shape(const std::vector<int>& sample, int batch) {
  std::vector<int> s;
  s.reserve(sample.size() + 1);
  s.push_back(batch);
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void forward_node(const Graph& g, int id, EvalWorkspace& ws) {
  const Node& n = g.nodes()[static_cast<std::size_t>(id)];
  const int B = ws.batch;
  auto& out = ws.value[static_cast<std::size_t>(id)];
  auto val = [&](int i) -> const Tensor& { return ws.value[static_cast<std::size_t>(i)]; };
  const std::int64_t per = shape_numel(n.shape);

  switch (n.op) {
    case Op::kInput:
      break;  // filled by caller
    case Op::kParam:
      out = g.params()[static_cast<std::size_t>(n.param_slot)];
      break;
    case Op::kMatMul: {
      const Tensor& x = val(n.in[0]);
      const Tensor& w = val(n.in[1]);
      const int in_dim = w.shape[0], out_dim = w.shape[1];
      out = Tensor::zeros(batched_shape(n.shape, B));
      MapCM X(x.data.data(), B, in_dim);
      MapCM W(w.data.data(), in_dim, out_dim);
      MapM Y(out.data.data(), B, out_dim);
      Y.noalias() = X * W;
      break;
    }
    case Op::kConv3x3: {
      const Tensor& x = val(n.in[0]);
      const Tensor& w = val(n.in[1]);
      const int C = w.shape[1], K = w.shape[0];
      const int H = n.shape[1], Wd = n.shape[2];
      out = Tensor::zeros(batched_shape(n.shape, B));
      // im2col per sample, then one K x (C*9) by (C*9) x (H*W) product.
      MatrixRM cols(C * 9, H * Wd);
      MapCM Wm(w.data.data(), K, C * 9);
      for (int bi = 0; bi < B; ++bi) {
        const float* xs = x.data.data() + static_cast<std::int64_t>(bi) * C * H * Wd;
        for (int c = 0; c < C; ++c) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int row = c * 9 + (dy + 1) * 3 + (dx + 1);
              for (int i = 0; i < H; ++i) {
                const int si = i + dy;
                for (int j = 0; j < Wd; ++j) {
                  const int sj = j + dx;
                  const bool inside = si >= 0 && si < H && sj >= 0 && sj < Wd;
                  cols(row, i * Wd + j) = inside ? xs[(c * H + si) * Wd + sj] : 0.f;
                }
              }
            }
          }
        }
        MapM Y(out.data.data() + static_cast<std::int64_t>(bi) * K * H * Wd, K, H * Wd);
        Y.noalias() = Wm * cols;
      }
      break;
    }
    case Op::kRelu: {
      out = val(n.in[0]);
      for (float& v : out.data) v = v > 0.f ? v : 0.f;
      break;
    }
    case Op::kMaxPool2: {
      const Tensor& x = val(n.in[0]);
      const int C = n.shape[0], Ho = n.shape[1], Wo = n.shape[2];
      const int Hi = Ho * 2, Wi = Wo * 2;
      out = Tensor::zeros(batched_shape(n.shape, B));
      for (int bi = 0; bi < B; ++bi) {
        const float* xs = x.data.data() + static_cast<std::int64_t>(bi) * C * Hi * Wi;
        float* ys = out.data.data() + static_cast<std::int64_t>(bi) * C * Ho * Wo;
        for (int c = 0; c < C; ++c) {
          for (int i = 0; i < Ho; ++i) {
            for (int j = 0; j < Wo; ++j) {
              const float* p = xs + (c * Hi + 2 * i) * Wi + 2 * j;
              float m = p[0];
              m = std::max(m, p[1]);
              m = std::max(m, p[Wi]);
              m = std::max(m, p[Wi + 1]);
              ys[(c * Ho + i) * Wo + j] = m;
            }
          }
        }
      }
      break;
    }
    case Op::kAddBias: {
      const Tensor& x = val(n.in[0]);
      const Tensor& bias = val(n.in[1]);
      out = x;
      if (n.shape.size() == 1) {
        const int F = n.shape[0];
        for (int bi = 0; bi < B; ++bi)
          for (int f = 0; f < F; ++f) out.data[static_cast<std::size_t>(bi) * F + f] += bias.data[static_cast<std::size_t>(f)];
      } else {
        const int C = n.shape[0];
        const int HW = n.shape[1] * n.shape[2];
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < C; ++c) {
            float* p = out.data.data() + (static_cast<std::int64_t>(bi) * C + c) * HW;
            const float bv = bias.data[static_cast<std::size_t>(c)];
            for (int k = 0; k < HW; ++k) p[k] += bv;
          }
      }
      break;
    }
    case Op::kSoftmax: {
      const Tensor& x = val(n.in[0]);
      const int m = n.shape[0];
      out = Tensor::zeros(batched_shape(n.shape, B));
      for (int bi = 0; bi < B; ++bi) {
        const float* z = x.data.data() + static_cast<std::int64_t>(bi) * m;
        float* p = out.data.data() + static_cast<std::int64_t>(bi) * m;
        float zmax = z[0];
        for (int j = 1; j < m; ++j) zmax = std::max(zmax, z[j]);
        float sum = 0.f;
        for (int j = 0; j < m; ++j) {
          p[j] = std::exp(z[j] - zmax);
          sum += p[j];
        }
        for (int j = 0; j < m; ++j) p[j] /= sum;
      }
      break;
    }
    case Op::kCrossEntropy: {
      // Computed from the softmax node's own logits: loss_i = lse(z_i) - z_{i,y_i}.
      if (static_cast<int>(ws.labels.size()) != B) fail("cross_entropy: labels missing or wrong count");
      const Node& sm = g.nodes()[static_cast<std::size_t>(n.in[0])];
      const Tensor& z = val(sm.in[0]);
      const int m = sm.shape[0];
      double total = 0.0;
      for (int bi = 0; bi < B; ++bi) {
        const int y = ws.labels[static_cast<std::size_t>(bi)];
        if (y < 0 || y >= m) fail("cross_entropy: label out of range");
        const float* zs = z.data.data() + static_cast<std::int64_t>(bi) * m;
        float zmax = zs[0];
        for (int j = 1; j < m; ++j) zmax = std::max(zmax, zs[j]);
        float sum = 0.f;
        for (int j = 0; j < m; ++j) sum += std::exp(zs[j] - zmax);
        total += static_cast<double>(zmax + std::log(sum) - zs[y]);
      }
      out = Tensor({1, 1}, {static_cast<float>(total / B)});
      break;
    }
    case Op::kAdd:
    case Op::kMul: {
      const Tensor& x = val(n.in[0]);
      const Tensor& y = val(n.in[1]);
      const bool y_broadcast = y.numel() != x.numel();  // builder puts the unbatched side second
      out = x;
      if (y_broadcast) {
        const std::int64_t nb = x.numel() / per;
        for (std::int64_t bi = 0; bi < nb; ++bi) {
          float* o = out.data.data() + bi * per;
          for (std::int64_t k = 0; k < per; ++k)
            o[k] = n.op == Op::kAdd ? o[k] + y.data[static_cast<std::size_t>(k)]
                                    : o[k] * y.data[static_cast<std::size_t>(k)];
        }
      } else {
        for (std::size_t k = 0; k < out.data.size(); ++k)
          out.data[k] = n.op == Op::kAdd ? out.data[k] + y.data[k] : out.data[k] * y.data[k];
      }
      break;
    }
    case Op::kScale: {
      out = val(n.in[0]);
      for (float& v : out.data) v *= n.a;
      break;
    }
    case Op::kClamp: {
      out = val(n.in[0]);
      for (float& v : out.data) v = std::clamp(v, n.a, n.b);
      break;
    }
    case Op::kReshape: {
      out = val(n.in[0]);
      out.shape = batched_shape(n.shape, B);
      break;
    }
  }
  if (!out.all_finite())
    fail(std::string("non-finite value produced by node ") + std::to_string(id) + " (" + op_name(n.op) + ")");
}

void backward_node(const Graph& g, int id, EvalWorkspace& ws) {
  const Node& n = g.nodes()[static_cast<std::size_t>(id)];
  const int B = ws.batch;
  const Tensor& gy = ws.grad[static_cast<std::size_t>(id)];
  if (gy.data.empty()) return;  // node not on a path to the loss
  auto val = [&](int i) -> const Tensor& { return ws.value[static_cast<std::size_t>(i)]; };
  auto accum = [&](int i) -> Tensor& {
    auto& t = ws.grad[static_cast<std::size_t>(i)];
    if (t.data.empty()) t = Tensor::zeros(ws.value[static_cast<std::size_t>(i)].shape);
    return t;
  };
  const std::int64_t per = shape_numel(n.shape);

  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kMatMul: {
      const Tensor& x = val(n.in[0]);
      const Tensor& w = val(n.in[1]);
      const int in_dim = w.shape[0], out_dim = w.shape[1];
      MapCM X(x.data.data(), B, in_dim);
      MapCM W(w.data.data(), in_dim, out_dim);
      MapCM GY(gy.data.data(), B, out_dim);
      MapM GX(accum(n.in[0]).data.data(), B, in_dim);
      MapM GW(accum(n.in[1]).data.data(), in_dim, out_dim);
      GX.noalias() += GY * W.transpose();
      GW.noalias() += X.transpose() * GY;
      break;
    }
    case Op::kConv3x3: {
      const Tensor& x = val(n.in[0]);
      const Tensor& w = val(n.in[1]);
      const int C = w.shape[1], K = w.shape[0];
      const int H = n.shape[1], Wd = n.shape[2];
      Tensor& gx = accum(n.in[0]);
      Tensor& gw = accum(n.in[1]);
      MatrixRM cols(C * 9, H * Wd);
      MatrixRM gcols(C * 9, H * Wd);
      MapCM Wm(w.data.data(), K, C * 9);
      MapM GW(gw.data.data(), K, C * 9);
      for (int bi = 0; bi < B; ++bi) {
        const float* xs = x.data.data() + static_cast<std::int64_t>(bi) * C * H * Wd;
        for (int c = 0; c < C; ++c)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int row = c * 9 + (dy + 1) * 3 + (dx + 1);
              for (int i = 0; i < H; ++i) {
                const int si = i + dy;
                for (int j = 0; j < Wd; ++j) {
                  const int sj = j + dx;
                  const bool inside = si >= 0 && si < H && sj >= 0 && sj < Wd;
                  cols(row, i * Wd + j) = inside ? xs[(c * H + si) * Wd + sj] : 0.f;
                }
              }
            }
        MapCM GY(gy.data.data() + static_cast<std::int64_t>(bi) * K * H * Wd, K, H * Wd);
        GW.noalias() += GY * cols.transpose();
        gcols.noalias() = Wm.transpose() * GY;
        float* gxs = gx.data.data() + static_cast<std::int64_t>(bi) * C * H * Wd;
        for (int c = 0; c < C; ++c)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int row = c * 9 + (dy + 1) * 3 + (dx + 1);
              for (int i = 0; i < H; ++i) {
                const int si = i + dy;
                if (si < 0 || si >= H) continue;
                for (int j = 0; j < Wd; ++j) {
                  const int sj = j + dx;
                  if (sj < 0 || sj >= Wd) continue;
                  gxs[(c * H + si) * Wd + sj] += gcols(row, i * Wd + j);
                }
              }
            }
      }
      break;
    }
    case Op::kRelu: {
      const Tensor& x = val(n.in[0]);
      Tensor& gx = accum(n.in[0]);
      for (std::size_t k = 0; k < gx.data.size(); ++k)
        if (x.data[k] > 0.f) gx.data[k] += gy.data[k];
      break;
    }
    case Op::kMaxPool2: {
      const Tensor& x = val(n.in[0]);
      Tensor& gx = accum(n.in[0]);
      const int C = n.shape[0], Ho = n.shape[1], Wo = n.shape[2];
      const int Hi = Ho * 2, Wi = Wo * 2;
      for (int bi = 0; bi < B; ++bi) {
        const float* xs = x.data.data() + static_cast<std::int64_t>(bi) * C * Hi * Wi;
        float* gxs = gx.data.data() + static_cast<std::int64_t>(bi) * C * Hi * Wi;
        const float* gys = gy.data.data() + static_cast<std::int64_t>(bi) * C * Ho * Wo;
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
              const int base = (c * Hi + 2 * i) * Wi + 2 * j;
              const int offs[4] = {0, 1, Wi, Wi + 1};
              int best = 0;
              float m = xs[base];
              for (int t = 1; t < 4; ++t)
                if (xs[base + offs[t]] > m) {
                  m = xs[base + offs[t]];
                  best = t;
                }
              gxs[base + offs[best]] += gys[(c * Ho + i) * Wo + j];
            }
      }
      break;
    }
    case Op::kAddBias: {
      Tensor& gx = accum(n.in[0]);
      Tensor& gb = accum(n.in[1]);
      for (std::size_t k = 0; k < gx.data.size(); ++k) gx.data[k] += gy.data[k];
      if (n.shape.size() == 1) {
        const int F = n.shape[0];
        for (int bi = 0; bi < B; ++bi)
          for (int f = 0; f < F; ++f) gb.data[static_cast<std::size_t>(f)] += gy.data[static_cast<std::size_t>(bi) * F + f];
      } else {
        const int C = n.shape[0];
        const int HW = n.shape[1] * n.shape[2];
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < C; ++c) {
            const float* p = gy.data.data() + (static_cast<std::int64_t>(bi) * C + c) * HW;
            float s = 0.f;
            for (int k = 0; k < HW; ++k) s += p[k];
            gb.data[static_cast<std::size_t>(c)] += s;
          }
      }
      break;
    }
    case Op::kSoftmax: {
      const Tensor& p = ws.value[static_cast<std::size_t>(id)];
      Tensor& gx = accum(n.in[0]);
      const int m = n.shape[0];
      for (int bi = 0; bi < B; ++bi) {
        const float* pv = p.data.data() + static_cast<std::int64_t>(bi) * m;
        const float* gv = gy.data.data() + static_cast<std::int64_t>(bi) * m;
        float dot = 0.f;
        for (int j = 0; j < m; ++j) dot += pv[j] * gv[j];
        float* gxv = gx.data.data() + static_cast<std::int64_t>(bi) * m;
        for (int j = 0; j < m; ++j) gxv[j] += pv[j] * (gv[j] - dot);
      }
      break;
    }
    case Op::kCrossEntropy: {
      // Fused path: gradient flows straight to the softmax's logits as
      // (p - onehot(y)) / B, scaled by the incoming scalar gradient. The
      // probabilities are recomputed in double so that saturated rows keep
      // their sign information instead of rounding to an exact zero, which
      // would freeze sign-gradient consumers.
      const Node& sm = g.nodes()[static_cast<std::size_t>(n.in[0])];
      const Tensor& z = val(sm.in[0]);
      Tensor& gz = accum(sm.in[0]);
      const int m = sm.shape[0];
      const double gscale = static_cast<double>(gy.data[0]) / B;
      for (int bi = 0; bi < B; ++bi) {
        const int y = ws.labels[static_cast<std::size_t>(bi)];
        const float* zv = z.data.data() + static_cast<std::int64_t>(bi) * m;
        float* gzv = gz.data.data() + static_cast<std::int64_t>(bi) * m;
        double zmax = zv[0];
        for (int j = 1; j < m; ++j) zmax = std::max(zmax, static_cast<double>(zv[j]));
        double sum = 0.0;
        for (int j = 0; j < m; ++j) sum += std::exp(static_cast<double>(zv[j]) - zmax);
        for (int j = 0; j < m; ++j) {
          const double pj = std::exp(static_cast<double>(zv[j]) - zmax) / sum;
          gzv[j] += static_cast<float>(gscale * (pj - (j == y ? 1.0 : 0.0)));
        }
      }
      break;
    }
    case Op::kAdd:
    case Op::kMul: {
      const Tensor& x = val(n.in[0]);
      const Tensor& y = val(n.in[1]);
      Tensor& gx = accum(n.in[0]);
      Tensor& gyy = accum(n.in[1]);
      const bool y_broadcast = y.numel() != x.numel();
      const std::int64_t nb = x.numel() / per;
      for (std::int64_t bi = 0; bi < nb; ++bi) {
        const std::int64_t off = bi * per;
        for (std::int64_t k = 0; k < per; ++k) {
          const float go = gy.data[static_cast<std::size_t>(off + k)];
          const std::size_t yi = y_broadcast ? static_cast<std::size_t>(k) : static_cast<std::size_t>(off + k);
          if (n.op == Op::kAdd) {
            gx.data[static_cast<std::size_t>(off + k)] += go;
            gyy.data[yi] += go;
          } else {
            gx.data[static_cast<std::size_t>(off + k)] += go * y.data[yi];
            gyy.data[yi] += go * x.data[static_cast<std::size_t>(off + k)];
          }
        }
      }
      break;
    }
    case Op::kScale: {
      Tensor& gx = accum(n.in[0]);
      for (std::size_t k = 0; k < gx.data.size(); ++k) gx.data[k] += gy.data[k] * n.a;
      break;
    }
    case Op::kClamp: {
      const Tensor& x = val(n.in[0]);
      Tensor& gx = accum(n.in[0]);
      for (std::size_t k = 0; k < gx.data.size(); ++k)
        if (x.data[k] > n.a && x.data[k] < n.b) gx.data[k] += gy.data[k];
      break;
    }
    case Op::kReshape: {
      Tensor& gx = accum(n.in[0]);
      for (std::size_t k = 0; k < gx.data.size(); ++k) gx.data[k] += gy.data[k];
      break;
    }
  }
}

void run_forward(const Graph& g, const Tensor& inputs, std::span<const int> labels, int upto,
                 EvalWorkspace& ws) {
  if (g.input_node() < 0) fail("graph has no input node");
  const Node& in = g.nodes()[static_cast<std::size_t>(g.input_node())];
  Tensor batch = inputs;
  if (batch.shape == in.shape) {
    batch.shape = batched_shape(in.shape, 1);
  } else if (batch.rank() == static_cast<int>(in.shape.size()) + 1 &&
             std::equal(in.shape.begin(), in.shape.end(), batch.shape.begin() + 1)) {
    // already batched
  } else {
    fail("input shape " + shape_str(inputs.shape) + " does not match declared " + shape_str(in.shape));
  }
  ws.batch = batch.shape[0];
  ws.labels.assign(labels.begin(), labels.end());
  ws.value.assign(g.nodes().size(), Tensor{});
  ws.grad.assign(g.nodes().size(), Tensor{});
  ws.loss = std::numeric_limits<float>::quiet_NaN();
  ws.value[static_cast<std::size_t>(g.input_node())] = std::move(batch);
  if (!ws.value[static_cast<std::size_t>(g.input_node())].all_finite()) fail("non-finite input");
  for (int id = 0; id <= upto; ++id) {
    if (id == g.input_node()) continue;
    if (g.nodes()[static_cast<std::size_t>(id)].op == Op::kCrossEntropy && labels.empty()) continue;
    forward_node(g, id, ws);
  }
}

}  // namespace

Tensor forward(const Graph& g, const Tensor& inputs, EvalWorkspace& ws) {
  if (g.output_node() < 0) fail("graph has no output node");
  run_forward(g, inputs, {}, static_cast<int>(g.nodes().size()) - 1, ws);
  return ws.value[static_cast<std::size_t>(g.output_node())];
}

float forward_loss(const Graph& g, const Tensor& inputs, std::span<const int> labels,
                   EvalWorkspace& ws) {
  if (g.loss_node() < 0) fail("graph has no loss node");
  run_forward(g, inputs, labels, static_cast<int>(g.nodes().size()) - 1, ws);
  ws.loss = ws.value[static_cast<std::size_t>(g.loss_node())].data[0];
  return ws.loss;
}

void backward_from(const Graph& g, int from_node, EvalWorkspace& ws) {
  if (from_node < 0 || from_node >= static_cast<int>(g.nodes().size())) fail("backward: bad node");
  const Tensor& v = ws.value[static_cast<std::size_t>(from_node)];
  if (v.data.empty()) fail("backward: forward has not been run");
  if (v.numel() != 1) fail("backward: loss node is not scalar");
  for (auto& t : ws.grad) t = Tensor{};
  ws.grad[static_cast<std::size_t>(from_node)] = Tensor(v.shape, {1.f});
  for (int id = from_node; id >= 0; --id) backward_node(g, id, ws);
}

void backward(const Graph& g, EvalWorkspace& ws) {
  if (g.loss_node() < 0) fail("backward: graph has no loss node");
  backward_from(g, g.loss_node(), ws);
}

const Tensor& input_grad(const Graph& g, const EvalWorkspace& ws) {
  const Tensor& t = ws.grad[static_cast<std::size_t>(g.input_node())];
  if (t.data.empty()) fail("input_grad: input did not receive a gradient");
  return t;
}

std::vector<Tensor> param_grads(const Graph& g, const EvalWorkspace& ws) {
  std::vector<Tensor> out;
  out.reserve(g.param_nodes().size());
  for (int id : g.param_nodes()) {
    const Tensor& t = ws.grad[static_cast<std::size_t>(id)];
    if (t.data.empty())
      out.push_back(Tensor::zeros(g.param_of(id).shape));
    else
      out.push_back(t);
  }
  return out;
}

}  // namespace plab
