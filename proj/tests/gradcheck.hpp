#pragma once

// Central-finite-difference gradient oracle over the double-precision
// reference evaluator, compared against the library's float32 reverse pass.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "plab/graph.hpp"
#include "plab/rng.hpp"
#include "ref_forward.hpp"

namespace testing_support {

struct GradCheck {
  int checked = 0;
  double max_err = 0.0;     // worst |ad-fd| - (atol + rtol*max(|ad|,|fd|)), clipped at 0
  double max_rel = 0.0;
  bool ok = true;
  std::string worst;
};

inline GradCheck finite_diff_check(plab::Graph& g, const plab::Tensor& input,
                                   const std::vector<int>& labels, double h = 1e-3,
                                   double rtol = 1e-3, double atol = 1e-6) {
  GradCheck result;
  plab::EvalWorkspace ws;
  plab::forward_loss(g, input, labels, ws);
  plab::backward(g, ws);
  const plab::Tensor ad_input = plab::input_grad(g, ws);
  const std::vector<plab::Tensor> ad_params = plab::param_grads(g, ws);

  const auto& in_shape = g.nodes()[static_cast<std::size_t>(g.input_node())].shape;
  const int batch = input.shape == in_shape ? 1 : input.shape[0];
  std::vector<double> in_d(input.data.begin(), input.data.end());
  std::vector<std::vector<double>> params_d = ref::params_as_double(g);

  auto compare = [&](double ad, double fd, const char* what, std::size_t idx) {
    const double err = std::abs(ad - fd);
    const double allow = atol + rtol * std::max(std::abs(ad), std::abs(fd));
    result.checked += 1;
    if (std::abs(fd) > 0) result.max_rel = std::max(result.max_rel, err / std::max(std::abs(fd), atol));
    if (err > allow) {
      result.ok = false;
      if (result.worst.empty() || err - allow > result.max_err) {
        std::ostringstream os;
        os << what << "[" << idx << "]: ad=" << ad << " fd=" << fd << " err=" << err;
        result.worst = os.str();
      }
      result.max_err = std::max(result.max_err, err - allow);
    }
  };

  for (std::size_t i = 0; i < in_d.size(); ++i) {
    const double keep = in_d[i];
    in_d[i] = keep + h;
    const double up = ref::ref_loss(g, in_d, batch, labels, params_d);
    in_d[i] = keep - h;
    const double dn = ref::ref_loss(g, in_d, batch, labels, params_d);
    in_d[i] = keep;
    compare(ad_input.data[i], (up - dn) / (2 * h), "input", i);
  }
  for (std::size_t p = 0; p < params_d.size(); ++p) {
    for (std::size_t i = 0; i < params_d[p].size(); ++i) {
      const double keep = params_d[p][i];
      params_d[p][i] = keep + h;
      const double up = ref::ref_loss(g, in_d, batch, labels, params_d);
      params_d[p][i] = keep - h;
      const double dn = ref::ref_loss(g, in_d, batch, labels, params_d);
      params_d[p][i] = keep;
      compare(ad_params[p].data[i], (up - dn) / (2 * h), "param", i);
    }
  }
  return result;
}

struct RandomGraphCase {
  plab::Graph g;
  plab::Tensor input;
  std::vector<int> labels;
};

/// Random small graph from the supported op set, topped with softmax and the
/// cross-entropy loss, with inputs resampled until every relu/clamp/pool
/// input sits safely away from its kink (finite differences are only valid
/// away from nondifferentiable points).
inline RandomGraphCase make_random_graph(std::uint64_t seed) {
  plab::Rng rng(seed);
  RandomGraphCase cs;
  plab::Graph& g = cs.g;
  const int batch = 1 + static_cast<int>(rng.next_below(2));

  auto rand_param = [&](std::vector<int> shape) {
    plab::Tensor t = plab::Tensor::zeros(std::move(shape));
    for (float& v : t.data) v = rng.uniform(-0.8f, 0.8f);
    return g.add_param(std::move(t));
  };

  int classes = 2 + static_cast<int>(rng.next_below(3));
  int cur = -1;
  std::int64_t in_elems = 0;
  if (rng.bernoulli(0.35)) {
    const int c = 1 + static_cast<int>(rng.next_below(2));
    const int k = 1 + static_cast<int>(rng.next_below(2));
    cur = g.add_input({c, 4, 4});
    in_elems = static_cast<std::int64_t>(c) * 16;
    cur = g.conv3x3(cur, rand_param({k, c, 3, 3}));
    cur = g.add_bias(cur, rand_param({k}));
    cur = g.relu(cur);
    cur = g.maxpool2(cur);
    cur = g.reshape(cur, {k * 4});
    cur = g.matmul(cur, rand_param({k * 4, classes}));
    cur = g.add_bias(cur, rand_param({classes}));
  } else {
    int dim = 2 + static_cast<int>(rng.next_below(4));
    cur = g.add_input({dim});
    in_elems = dim;
    const int layers = 1 + static_cast<int>(rng.next_below(2));
    for (int l = 0; l < layers; ++l) {
      const int width = 2 + static_cast<int>(rng.next_below(5));
      cur = g.matmul(cur, rand_param({dim, width}));
      cur = g.add_bias(cur, rand_param({width}));
      const double pick = rng.next_double();
      if (pick < 0.55) {
        cur = g.relu(cur);
      } else if (pick < 0.7) {
        cur = g.clamp(cur, -0.6f, 0.9f);
      } else if (pick < 0.85) {
        cur = g.scale(cur, rng.uniform(0.4f, 1.6f));
      }
      if (rng.bernoulli(0.3)) {
        const int other = g.scale(cur, rng.uniform(-1.f, 1.f));
        cur = rng.bernoulli(0.5) ? g.add(cur, other) : g.mul(cur, g.clamp(other, -0.9f, 0.9f));
      }
      dim = width;
    }
    cur = g.matmul(cur, rand_param({dim, classes}));
    cur = g.add_bias(cur, rand_param({classes}));
  }
  const int probs = g.softmax(cur);
  g.set_output(probs);
  g.set_loss(g.cross_entropy(probs));

  cs.labels.resize(static_cast<std::size_t>(batch));
  for (auto& y : cs.labels) y = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(classes)));

  const auto& in_shape = g.nodes()[static_cast<std::size_t>(g.input_node())].shape;
  std::vector<int> bshape = in_shape;
  bshape.insert(bshape.begin(), batch);
  const auto params_d = ref::params_as_double(g);
  for (int attempt = 0; attempt < 300; ++attempt) {
    plab::Tensor input = plab::Tensor::zeros(bshape);
    for (float& v : input.data) v = rng.uniform(-3.f, 3.f);
    std::vector<double> in_d(input.data.begin(), input.data.end());
    const auto ref = ref::ref_forward(g, in_d, batch, cs.labels, params_d);
    if (ref.kink_margin > 0.02) {
      cs.input = std::move(input);
      return cs;
    }
  }
  (void)in_elems;
  throw std::runtime_error("random graph: could not find a kink-free input");
}

}  // namespace testing_support
