#pragma once

// Test-only reference evaluator: re-implements every op's forward semantics
// in double precision with plain loops, independently of the library's
// forward path. Used as the function under central finite differences and as
// a cross-check on forward outputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "plab/graph.hpp"

namespace ref {

struct RefResult {
  std::vector<std::vector<double>> values;  // per node, batched layout
  double loss = std::numeric_limits<double>::quiet_NaN();
  // Smallest distance of any relu/clamp input to its kink, and of any pool
  // window's max to its runner-up. Finite-difference checks are only valid
  // away from these nondifferentiable points.
  double kink_margin = std::numeric_limits<double>::infinity();
};

inline RefResult ref_forward(const plab::Graph& g, const std::vector<double>& input, int batch,
                             const std::vector<int>& labels,
                             const std::vector<std::vector<double>>& params) {
  using plab::Op;
  const auto& nodes = g.nodes();
  RefResult res;
  res.values.resize(nodes.size());

  auto per_of = [&](int id) {
    return plab::shape_numel(nodes[static_cast<std::size_t>(id)].shape);
  };

  for (int id = 0; id < static_cast<int>(nodes.size()); ++id) {
    const auto& n = nodes[static_cast<std::size_t>(id)];
    auto& out = res.values[static_cast<std::size_t>(id)];
    const auto in0 = [&]() -> const std::vector<double>& {
      return res.values[static_cast<std::size_t>(n.in[0])];
    };
    const auto in1 = [&]() -> const std::vector<double>& {
      return res.values[static_cast<std::size_t>(n.in[1])];
    };
    const int b = n.batched ? batch : 1;
    switch (n.op) {
      case Op::kInput:
        out = input;
        break;
      case Op::kParam:
        out = params[static_cast<std::size_t>(n.param_slot)];
        break;
      case Op::kMatMul: {
        const auto& nw = nodes[static_cast<std::size_t>(n.in[1])];
        const int kin = nw.shape[0], kout = nw.shape[1];
        out.assign(static_cast<std::size_t>(b) * kout, 0.0);
        for (int bi = 0; bi < b; ++bi)
          for (int i = 0; i < kin; ++i) {
            const double xv = in0()[static_cast<std::size_t>(bi * kin + i)];
            for (int j = 0; j < kout; ++j)
              out[static_cast<std::size_t>(bi * kout + j)] += xv * in1()[static_cast<std::size_t>(i * kout + j)];
          }
        break;
      }
      case Op::kConv3x3: {
        const auto& nx = nodes[static_cast<std::size_t>(n.in[0])];
        const int c = nx.shape[0], h = nx.shape[1], w = nx.shape[2];
        const int k = n.shape[0];
        out.assign(static_cast<std::size_t>(b) * k * h * w, 0.0);
        for (int bi = 0; bi < b; ++bi)
          for (int oc = 0; oc < k; ++oc)
            for (int i = 0; i < h; ++i)
              for (int j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int ic = 0; ic < c; ++ic)
                  for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                      const int si = i + dy, sj = j + dx;
                      if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
                      acc += in0()[static_cast<std::size_t>(((bi * c + ic) * h + si) * w + sj)] *
                             in1()[static_cast<std::size_t>(((oc * c + ic) * 3 + dy + 1) * 3 + dx + 1)];
                    }
                out[static_cast<std::size_t>(((bi * k + oc) * h + i) * w + j)] = acc;
              }
        break;
      }
      case Op::kRelu:
        out = in0();
        for (double& v : out) {
          res.kink_margin = std::min(res.kink_margin, std::abs(v));
          v = v > 0.0 ? v : 0.0;
        }
        break;
      case Op::kMaxPool2: {
        const int c = n.shape[0], ho = n.shape[1], wo = n.shape[2];
        const int hi = ho * 2, wi = wo * 2;
        out.assign(static_cast<std::size_t>(b) * c * ho * wo, 0.0);
        for (int bi = 0; bi < b; ++bi)
          for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < ho; ++i)
              for (int j = 0; j < wo; ++j) {
                double m1 = -std::numeric_limits<double>::infinity(), m2 = m1;
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx) {
                    const double v = in0()[static_cast<std::size_t>(
                        ((bi * c + ch) * hi + 2 * i + dy) * wi + 2 * j + dx)];
                    if (v > m1) {
                      m2 = m1;
                      m1 = v;
                    } else if (v > m2) {
                      m2 = v;
                    }
                  }
                res.kink_margin = std::min(res.kink_margin, m1 - m2);
                out[static_cast<std::size_t>(((bi * c + ch) * ho + i) * wo + j)] = m1;
              }
        break;
      }
      case Op::kAddBias: {
        out = in0();
        if (n.shape.size() == 1) {
          const int f = n.shape[0];
          for (int bi = 0; bi < b; ++bi)
            for (int i = 0; i < f; ++i) out[static_cast<std::size_t>(bi * f + i)] += in1()[static_cast<std::size_t>(i)];
        } else {
          const int c = n.shape[0], hw = n.shape[1] * n.shape[2];
          for (int bi = 0; bi < b; ++bi)
            for (int ch = 0; ch < c; ++ch)
              for (int i = 0; i < hw; ++i)
                out[static_cast<std::size_t>((bi * c + ch) * hw + i)] += in1()[static_cast<std::size_t>(ch)];
        }
        break;
      }
      case Op::kSoftmax: {
        const int m = n.shape[0];
        out.assign(static_cast<std::size_t>(b) * m, 0.0);
        for (int bi = 0; bi < b; ++bi) {
          double zmax = -std::numeric_limits<double>::infinity();
          for (int j = 0; j < m; ++j) zmax = std::max(zmax, in0()[static_cast<std::size_t>(bi * m + j)]);
          double sum = 0.0;
          for (int j = 0; j < m; ++j) {
            out[static_cast<std::size_t>(bi * m + j)] = std::exp(in0()[static_cast<std::size_t>(bi * m + j)] - zmax);
            sum += out[static_cast<std::size_t>(bi * m + j)];
          }
          for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(bi * m + j)] /= sum;
        }
        break;
      }
      case Op::kCrossEntropy: {
        const auto& probs = in0();
        const auto& sm = nodes[static_cast<std::size_t>(n.in[0])];
        const int m = sm.shape[0];
        double total = 0.0;
        for (int bi = 0; bi < batch; ++bi)
          total += -std::log(probs[static_cast<std::size_t>(bi * m + labels[static_cast<std::size_t>(bi)])]);
        out.assign(1, total / batch);
        res.loss = out[0];
        break;
      }
      case Op::kAdd:
      case Op::kMul: {
        const auto& x = in0();
        const auto& y = in1();
        out = x;
        const bool bc = y.size() != x.size();
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double yv = bc ? y[i % y.size()] : y[i];
          out[i] = n.op == Op::kAdd ? x[i] + yv : x[i] * yv;
        }
        break;
      }
      case Op::kScale:
        out = in0();
        for (double& v : out) v *= n.a;
        break;
      case Op::kClamp:
        out = in0();
        for (double& v : out) {
          res.kink_margin = std::min(res.kink_margin, std::abs(v - n.a));
          res.kink_margin = std::min(res.kink_margin, std::abs(v - n.b));
          v = std::clamp(v, static_cast<double>(n.a), static_cast<double>(n.b));
        }
        break;
      case Op::kReshape:
        out = in0();
        break;
    }
    (void)per_of;
  }
  return res;
}

inline std::vector<std::vector<double>> params_as_double(const plab::Graph& g) {
  std::vector<std::vector<double>> out;
  for (const auto& p : g.params()) out.emplace_back(p.data.begin(), p.data.end());
  return out;
}

/// Loss value of the graph's loss node under the reference evaluator.
inline double ref_loss(const plab::Graph& g, const std::vector<double>& input, int batch,
                       const std::vector<int>& labels, const std::vector<std::vector<double>>& params) {
  return ref_forward(g, input, batch, labels, params).loss;
}

}  // namespace ref
