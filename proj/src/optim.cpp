#include "plab/optim.hpp"

#include <stdexcept>

namespace plab {

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, OptimState& state) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: param/grad count mismatch");
  if (!(state.lr >= 0.f)) throw std::invalid_argument("sgd_step: negative learning rate");
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Tensor& p : params) state.velocity.push_back(Tensor::zeros(p.shape));
  }
  if (state.velocity.size() != params.size()) throw std::invalid_argument("sgd_step: stale optimizer state");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    Tensor& v = state.velocity[i];
    if (!p.same_shape(g) || !p.same_shape(v)) throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      v.data[k] = state.momentum * v.data[k] + g.data[k] + state.weight_decay * p.data[k];
      p.data[k] -= state.lr * v.data[k];
    }
  }
}

void sgd_step(Graph& g, const EvalWorkspace& ws, OptimState& state) {
  auto grads = param_grads(g, ws);
  sgd_step(g.params(), grads, state);
}

}  // namespace plab
