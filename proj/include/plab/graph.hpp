#pragma once

#include <array>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "plab/tensor.hpp"

namespace plab {

enum class Op {
  kInput,
  kParam,
  kMatMul,     // [B,n] x [n,k] -> [B,k]
  kConv3x3,    // [B,C,H,W] x [K,C,3,3] -> [B,K,H,W], stride 1, padding 1
  kRelu,
  kMaxPool2,   // 2x2 window, stride 2
  kAddBias,    // [B,F]+[F] or [B,C,H,W]+[C]
  kSoftmax,    // rowwise over last axis of [B,m]
  kCrossEntropy,  // mean of -log p_label over the batch; input must be a softmax node
  kAdd,
  kMul,
  kScale,
  kClamp,
  kReshape,
};

const char* op_name(Op op);

struct Node {
  Op op;
  std::array<int, 2> in{-1, -1};
  std::vector<int> shape;  // per-sample shape; batch axis is implicit
  float a = 0.f;           // scale factor / clamp lower bound
  float b = 0.f;           // clamp upper bound
  int param_slot = -1;
  bool batched = false;    // value carries the batch axis (depends on the input node)
};

/// A static feed-forward compute graph. Nodes are appended in construction
/// order, which is therefore a topological order: backward walks it once in
/// reverse. The graph owns its parameters; evaluation state lives in an
/// EvalWorkspace so one graph can be evaluated concurrently on independent
/// inputs (parameters must not be updated while shared).
class Graph {
 public:
  int add_input(std::vector<int> shape);
  int add_param(Tensor init);
  int matmul(int x, int w);
  int conv3x3(int x, int w);
  int add_bias(int x, int bias);
  int relu(int x);
  int maxpool2(int x);
  int softmax(int x);
  int cross_entropy(int softmax_node);
  int add(int x, int y);
  int mul(int x, int y);
  int scale(int x, float c);
  int clamp(int x, float lo, float hi);
  int reshape(int x, std::vector<int> shape);

  void set_output(int node);
  void set_loss(int node);

  int input_node() const { return input_; }
  int output_node() const { return output_; }
  int loss_node() const { return loss_; }
  bool batched(int id) const;
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<int>& param_nodes() const { return param_nodes_; }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const Tensor& param_of(int node) const;
  std::int64_t param_count() const;

  void save_params(const std::filesystem::path& path) const;
  void load_params(const std::filesystem::path& path);

 private:
  int push(Node n);
  const Node& at(int id, const char* ctx) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> params_;     // indexed by param_slot
  std::vector<int> param_nodes_;   // node id per slot
  int input_ = -1;
  int output_ = -1;
  int loss_ = -1;
};

/// Per-evaluation storage: node values and gradients for one batch.
struct EvalWorkspace {
  std::vector<Tensor> value;
  std::vector<Tensor> grad;
  std::vector<int> labels;
  int batch = 0;
  float loss = std::numeric_limits<float>::quiet_NaN();
};

/// Runs the graph up to its output node. `inputs` is either one sample with
/// the declared input shape or a batch with a leading batch axis. Throws on
/// shape mismatch or any non-finite intermediate value.
Tensor forward(const Graph& g, const Tensor& inputs, EvalWorkspace& ws);

/// Runs the graph through its loss node; labels are 0-based class indices.
float forward_loss(const Graph& g, const Tensor& inputs, std::span<const int> labels,
                   EvalWorkspace& ws);

/// Reverse pass from `from_node`, which must hold a single scalar. Fills
/// ws.grad for the input node and every parameter node. Deterministic: each
/// node is visited exactly once in reverse construction order.
void backward_from(const Graph& g, int from_node, EvalWorkspace& ws);

/// Reverse pass from the graph's designated loss node.
void backward(const Graph& g, EvalWorkspace& ws);

const Tensor& input_grad(const Graph& g, const EvalWorkspace& ws);
std::vector<Tensor> param_grads(const Graph& g, const EvalWorkspace& ws);

}  // namespace plab
