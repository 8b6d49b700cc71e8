#pragma once

#include <vector>

#include "plab/graph.hpp"
#include "plab/tensor.hpp"

namespace plab {

/// SGD with classical momentum and weight decay folded into the gradient:
///   v <- momentum * v + g + weight_decay * p
///   p <- p - lr * v
struct OptimState {
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  std::vector<Tensor> velocity;  // lazily sized to match the parameters
};

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, OptimState& state);

/// Convenience wrapper: updates the graph's parameters from ws gradients.
void sgd_step(Graph& g, const EvalWorkspace& ws, OptimState& state);

}  // namespace plab
