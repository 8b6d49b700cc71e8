#include "plab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "plab/model_zoo.hpp"
#include "plab/trainer.hpp"

namespace plab {

nlohmann::json ConditionReport::to_json() const {
  return nlohmann::json{{"epsilon_c1", epsilon_c1},
                        {"similarity_k", similarity_k},
                        {"similarity_k_shortcut", similarity_k_shortcut},
                        {"tau_c3", tau_c3},
                        {"tau_c3_shifted", tau_c3_shifted},
                        {"v_adv", v_adv},
                        {"v_sc", v_sc},
                        {"clean_acc", clean_acc},
                        {"target_acc", target_acc},
                        {"asr", asr}};
}

std::string ConditionReport::csv_header() {
  return "epsilon_c1,similarity_k,similarity_k_shortcut,tau_c3,tau_c3_shifted,v_adv,v_sc,clean_acc,"
         "target_acc,asr";
}

std::string ConditionReport::csv_row() const {
  std::ostringstream os;
  os << epsilon_c1 << ',' << similarity_k << ',' << similarity_k_shortcut << ',' << tau_c3 << ','
     << tau_c3_shifted << ',' << v_adv << ',' << v_sc << ',' << clean_acc << ',' << target_acc << ','
     << asr;
  return os.str();
}

Tensor forward_probs(const Graph& net, const Tensor& images, int eval_batch) {
  if (images.rank() < 2) throw std::invalid_argument("forward_probs: expects a batch");
  const int n = images.shape[0];
  const std::int64_t per = images.numel() / n;
  EvalWorkspace ws;
  Tensor out;
  std::vector<int> sample_shape(images.shape.begin() + 1, images.shape.end());
  for (int start = 0; start < n; start += eval_batch) {
    const int bsz = std::min(eval_batch, n - start);
    std::vector<int> shape = sample_shape;
    shape.insert(shape.begin(), bsz);
    Tensor batch(shape, std::vector<float>(
                            images.data.begin() + static_cast<std::int64_t>(start) * per,
                            images.data.begin() + static_cast<std::int64_t>(start + bsz) * per));
    Tensor probs = forward(net, batch, ws);
    if (out.data.empty()) out = Tensor::zeros({n, probs.shape.back()});
    std::copy(probs.data.begin(), probs.data.end(),
              out.data.begin() + static_cast<std::int64_t>(start) * probs.shape.back());
  }
  return out;
}

double mean_cross_entropy(const Graph& net, const Tensor& images, const std::vector<int>& labels,
                          int eval_batch) {
  const int n = images.shape[0];
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("mean_cross_entropy: label count");
  const std::int64_t per = images.numel() / n;
  EvalWorkspace ws;
  double total = 0.0;
  std::vector<int> sample_shape(images.shape.begin() + 1, images.shape.end());
  for (int start = 0; start < n; start += eval_batch) {
    const int bsz = std::min(eval_batch, n - start);
    std::vector<int> shape = sample_shape;
    shape.insert(shape.begin(), bsz);
    Tensor batch(shape, std::vector<float>(
                            images.data.begin() + static_cast<std::int64_t>(start) * per,
                            images.data.begin() + static_cast<std::int64_t>(start + bsz) * per));
    std::vector<int> ls(labels.begin() + start, labels.begin() + start + bsz);
    total += static_cast<double>(forward_loss(net, batch, ls, ws)) * bsz;
  }
  return total / n;
}

double eval_accuracy(const Graph& net, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("eval_accuracy: empty dataset");
  const Tensor probs = forward_probs(net, data.images);
  const int m = probs.shape.back();
  std::int64_t correct = 0;
  for (int i = 0; i < data.size(); ++i)
    correct += argmax_row(probs.data.data() + static_cast<std::int64_t>(i) * m, m) ==
               data.labels[static_cast<std::size_t>(i)];
  return static_cast<double>(correct) / data.size();
}

double eval_class_accuracy(const Graph& net, const Dataset& data, int label) {
  auto idx = data.indices_with_label(label);
  if (idx.empty()) throw std::invalid_argument("eval_class_accuracy: class has no samples");
  const Tensor probs = forward_probs(net, data.images);
  const int m = probs.shape.back();
  std::int64_t correct = 0;
  for (int i : idx)
    correct += argmax_row(probs.data.data() + static_cast<std::int64_t>(i) * m, m) == label;
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

namespace {

// Triggered copies of the selected rows, clamped back into [0,1].
Tensor triggered_images(const Dataset& data, const TriggerSet& triggers, const std::vector<int>& idx) {
  auto shape = data.sample_shape();
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), shape[0], shape[1], shape[2]});
  const std::int64_t per = data.sample_numel();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Tensor x = data.sample(idx[i]);
    const Tensor& d = triggers.delta_for(idx[i]);
    float* dst = out.data.data() + static_cast<std::int64_t>(i) * per;
    for (std::int64_t k = 0; k < per; ++k)
      dst[k] = std::clamp(x.data[static_cast<std::size_t>(k)] + d.data[static_cast<std::size_t>(k)], 0.f, 1.f);
  }
  return out;
}

std::vector<int> all_indices(const Dataset& data) {
  std::vector<int> idx(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

}  // namespace

double eval_asr(const Graph& net, const Dataset& data, const TriggerSet& triggers, int target_label) {
  std::vector<int> idx;
  for (int i = 0; i < data.size(); ++i)
    if (data.labels[static_cast<std::size_t>(i)] != target_label) idx.push_back(i);
  if (idx.empty()) throw std::invalid_argument("eval_asr: every sample carries the target label");
  const Tensor probs = forward_probs(net, triggered_images(data, triggers, idx));
  const int m = probs.shape.back();
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < idx.size(); ++i)
    hits += argmax_row(probs.data.data() + static_cast<std::int64_t>(i) * m, m) == target_label;
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

double measure_c1_epsilon(const Graph& g_clean, const Dataset& data, const TriggerSet& triggers,
                          int target_label) {
  auto idx = data.indices_with_label(target_label);
  if (idx.empty()) throw std::invalid_argument("measure_c1_epsilon: no target-class samples");
  const Tensor probs = forward_probs(g_clean, triggered_images(data, triggers, idx));
  const int m = probs.shape.back();
  double sum = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i)
    sum += probs.data[static_cast<std::int64_t>(i) * m + target_label];
  return sum / static_cast<double>(idx.size());
}

SimilarityK measure_similarity_k(const TriggerSet& triggers) {
  if (triggers.deltas.size() < 2) throw std::invalid_argument("similarity_k: needs at least 2 triggers");
  SimilarityK out;
  const Tensor* comp = nullptr;
  Tensor comp_store;
  if (triggers.mask) {
    comp_store = triggers.mask->complement();
    comp = &comp_store;
  }
  for (std::size_t i = 0; i < triggers.deltas.size(); ++i) {
    for (std::size_t j = i + 1; j < triggers.deltas.size(); ++j) {
      const Tensor& a = triggers.deltas[i];
      const Tensor& b = triggers.deltas[j];
      double full = 0.0, restr = 0.0;
      for (std::size_t k = 0; k < a.data.size(); ++k) {
        const double d = static_cast<double>(a.data[k]) - static_cast<double>(b.data[k]);
        full += d * d;
        if (comp && comp->data[k] != 0.f) restr += d * d;
      }
      out.k = std::max(out.k, std::sqrt(full));
      out.k_shortcut = std::max(out.k_shortcut, std::sqrt(comp ? restr : full));
    }
  }
  return out;
}

double measure_c3_tau(const Graph& f_poison, const Graph& g_clean, const Dataset& data,
                      const TriggerSet& triggers, int target_label, float bare_shift) {
  auto idx = all_indices(data);
  std::vector<int> covered;
  for (int i : idx)
    if (triggers.has(i)) covered.push_back(i);
  if (covered.empty()) throw std::invalid_argument("measure_c3_tau: no triggers for this dataset");

  auto shape = data.sample_shape();
  const std::int64_t per = data.sample_numel();
  Tensor bare = Tensor::zeros({static_cast<int>(covered.size()), shape[0], shape[1], shape[2]});
  for (std::size_t i = 0; i < covered.size(); ++i) {
    const Tensor& d = triggers.delta_for(covered[i]);
    float* dst = bare.data.data() + static_cast<std::int64_t>(i) * per;
    for (std::int64_t k = 0; k < per; ++k)
      dst[k] = std::clamp(bare_shift + d.data[static_cast<std::size_t>(k)], 0.f, 1.f);
  }
  Tensor applied = triggered_images(data, triggers, covered);

  const Tensor pf_bare = forward_probs(f_poison, bare);
  const Tensor pg_bare = forward_probs(g_clean, bare);
  const Tensor pf_app = forward_probs(f_poison, applied);
  const Tensor pg_app = forward_probs(g_clean, applied);
  const int m = pf_bare.shape.back();
  if (pg_bare.shape.back() != m) throw std::invalid_argument("measure_c3_tau: output dims differ");

  double sum = 0.0;
  for (std::size_t i = 0; i < covered.size(); ++i) {
    const std::int64_t o = static_cast<std::int64_t>(i) * m + target_label;
    const double diff_bare = static_cast<double>(pf_bare.data[o]) - static_cast<double>(pg_bare.data[o]);
    const double diff_app = static_cast<double>(pf_app.data[o]) - static_cast<double>(pg_app.data[o]);
    sum += std::abs(diff_bare - diff_app);
  }
  return sum / static_cast<double>(covered.size());
}

double v_adv(const Graph& f_clean, const Dataset& data, const TriggerSet& triggers) {
  auto idx = all_indices(data);
  std::vector<int> covered;
  for (int i : idx)
    if (triggers.has(i)) covered.push_back(i);
  if (covered.empty()) throw std::invalid_argument("v_adv: no triggers for this dataset");
  std::vector<int> labels;
  labels.reserve(covered.size());
  for (int i : covered) labels.push_back(data.labels[static_cast<std::size_t>(i)]);
  return mean_cross_entropy(f_clean, triggered_images(data, triggers, covered), labels);
}

namespace {

Graph build_vsc_net(const std::vector<int>& shape, const VscConfig& cfg, std::uint64_t seed) {
  const bool conv_shape = (shape[0] == 3 && shape[1] == 32 && shape[2] == 32) ||
                          (shape[0] == 1 && shape[1] == 28 && shape[2] == 28);
  if (conv_shape) return build_f2_binary(shape[0], shape[1], shape[2], seed);
  NetworkSpec spec;
  spec.kind = NetKind::kMlp;
  spec.width = cfg.mlp_width;
  spec.depth = 1;
  spec.in_c = shape[0];
  spec.in_h = shape[1];
  spec.in_w = shape[2];
  spec.classes = 2;
  return build_mlp(spec, seed);
}

}  // namespace

double v_sc(const Dataset& data, const TriggerSet& triggers, const VscConfig& cfg, std::uint64_t seed) {
  auto idx = all_indices(data);
  std::vector<int> covered;
  for (int i : idx)
    if (triggers.has(i)) covered.push_back(i);
  if (covered.empty()) throw std::invalid_argument("v_sc: no triggers for this dataset");

  auto shape = data.sample_shape();
  const std::int64_t per = data.sample_numel();
  const int n = static_cast<int>(covered.size());
  Dataset pairs;
  pairs.images = Tensor::zeros({2 * n, shape[0], shape[1], shape[2]});
  pairs.labels.resize(static_cast<std::size_t>(2 * n));
  pairs.classes = 2;
  pairs.name = data.name + "+vsc";
  Tensor trig = triggered_images(data, triggers, covered);
  for (int i = 0; i < n; ++i) {
    std::copy_n(trig.data.begin() + static_cast<std::int64_t>(i) * per, per,
                pairs.images.data.begin() + static_cast<std::int64_t>(2 * i) * per);
    Tensor x = data.sample(covered[static_cast<std::size_t>(i)]);
    std::copy_n(x.data.begin(), per, pairs.images.data.begin() + (static_cast<std::int64_t>(2 * i) + 1) * per);
    pairs.labels[static_cast<std::size_t>(2 * i)] = 0;
    pairs.labels[static_cast<std::size_t>(2 * i) + 1] = 1;
  }

  Graph net = build_vsc_net(shape, cfg, Rng(seed).split(0x767363).seed());
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.lr = cfg.lr;
  tc.momentum = cfg.momentum;
  tc.weight_decay = cfg.weight_decay;
  tc.batch = cfg.batch;
  tc.seed = Rng(seed).split(0x747261).seed();
  train(net, pairs, tc);

  // Final value: mean over samples of L(F(x+P(x)),0) + L(F(x),1).
  std::vector<int> zeros(static_cast<std::size_t>(n), 0);
  std::vector<int> ones(static_cast<std::size_t>(n), 1);
  Tensor clean = Tensor::zeros({n, shape[0], shape[1], shape[2]});
  for (int i = 0; i < n; ++i) {
    Tensor x = data.sample(covered[static_cast<std::size_t>(i)]);
    std::copy_n(x.data.begin(), per, clean.data.begin() + static_cast<std::int64_t>(i) * per);
  }
  return mean_cross_entropy(net, trig, zeros) + mean_cross_entropy(net, clean, ones);
}

namespace {

std::vector<double> to_point(const Tensor& t) {
  std::vector<double> p(t.data.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = t.data[i];
  return p;
}

}  // namespace

ShortcutCheck check_binary_shortcut(const Dataset& binary_data, const TriggerSet& triggers, double eta1) {
  if (!(eta1 > 0.0 && eta1 < 0.5)) throw std::invalid_argument("shortcut check: need 0 < eta1 < 0.5");
  std::vector<std::vector<double>> class0, class1;
  const std::int64_t per = binary_data.sample_numel();
  for (int i = 0; i < binary_data.size(); ++i) {
    const int y = binary_data.labels[static_cast<std::size_t>(i)];
    if (y != 0 && y != 1) throw std::invalid_argument("shortcut check: labels must be binary");
    Tensor x = binary_data.sample(i);
    if (y == 0) {
      const Tensor& d = triggers.delta_for(i);
      for (std::int64_t k = 0; k < per; ++k) x.data[static_cast<std::size_t>(k)] += d.data[static_cast<std::size_t>(k)];
      class0.push_back(to_point(x));
    } else {
      class1.push_back(to_point(x));
    }
  }
  if (class0.empty() || class1.empty())
    throw std::invalid_argument("shortcut check: both classes must be populated");

  auto res = check_margin_separable(class0, class1, 1.0 - 2.0 * eta1);
  ShortcutCheck out;
  out.separable = res.separable;
  out.achieved_margin = res.achieved_margin;
  if (res.separable) {
    // Re-center the offset for this eta1: the solver's witness balances the
    // slack around the [eta1, 1-eta1] band by construction.
    out.witness = res.witness;
  }
  return out;
}

SimpleFeatureReport verify_simple_feature_bound(const LinearWitness& h, const Dataset& binary_data,
                                                const TriggerSet& triggers, double eta1) {
  if (!(eta1 > 0.0 && eta1 < 0.5)) throw std::invalid_argument("simple-feature check: need 0 < eta1 < 0.5");
  constexpr double kTol = 1e-9;
  std::vector<int> class0;
  std::vector<std::vector<double>> points;
  const std::int64_t per = binary_data.sample_numel();
  for (int i = 0; i < binary_data.size(); ++i) {
    Tensor x = binary_data.sample(i);
    points.push_back(to_point(x));
    const int y = binary_data.labels[static_cast<std::size_t>(i)];
    if (y == 0) {
      class0.push_back(i);
      std::vector<double> xp = points.back();
      const Tensor& d = triggers.delta_for(i);
      for (std::int64_t k = 0; k < per; ++k) xp[static_cast<std::size_t>(k)] += d.data[static_cast<std::size_t>(k)];
      if (h(xp) < 1.0 - eta1 - kTol)
        throw std::invalid_argument("simple-feature check: witness misses the class-0 margin");
    } else if (y == 1) {
      if (h(points.back()) > eta1 + kTol)
        throw std::invalid_argument("simple-feature check: witness misses the class-1 margin");
    } else {
      throw std::invalid_argument("simple-feature check: labels must be binary");
    }
  }
  if (class0.empty()) throw std::invalid_argument("simple-feature check: no class-0 samples");

  SimpleFeatureReport rep;
  for (std::size_t a = 0; a < class0.size(); ++a)
    for (std::size_t b = a + 1; b < class0.size(); ++b)
      rep.k = std::max(rep.k, static_cast<double>(l2_dist(triggers.delta_for(class0[a]),
                                                          triggers.delta_for(class0[b]))));
  rep.bound = 1.0 - 2.0 * eta1 - rep.k;

  double min_shift = std::numeric_limits<double>::infinity();
  double min_bare = std::numeric_limits<double>::infinity();
  for (int i0 : class0) {
    const Tensor& d = triggers.delta_for(i0);
    std::vector<double> dp = to_point(d);
    min_bare = std::min(min_bare, h.linear(dp));
    for (const auto& x1 : points) {
      std::vector<double> shifted = x1;
      for (std::size_t k = 0; k < shifted.size(); ++k) shifted[k] += dp[k];
      min_shift = std::min(min_shift, h(shifted) - h(x1));
    }
  }
  rep.min_slack_shift = min_shift - rep.bound;
  rep.min_slack_bare = min_bare - rep.bound;
  rep.ok = rep.min_slack_shift >= -kTol && rep.min_slack_bare >= -kTol;
  return rep;
}

}  // namespace plab
