#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plab/data.hpp"
#include "plab/graph.hpp"
#include "plab/linsep.hpp"
#include "plab/trigger.hpp"

#include <nlohmann/json.hpp>

namespace plab {

/// Measured attack-goal and condition proxies for one run.
struct ConditionReport {
  double epsilon_c1 = 0.0;      // clean net's true-label mass at triggered target-class inputs
  double similarity_k = 0.0;    // max pairwise L2 distance between triggers
  double similarity_k_shortcut = 0.0;  // same, restricted to the mask complement
  double tau_c3 = 0.0;          // backdoor-response gap between bare and applied trigger
  double tau_c3_shifted = 0.0;  // bare trigger evaluated at 0.5 + P(x)
  double v_adv = 0.0;           // clean net's CE on triggered inputs
  double v_sc = 0.0;            // trained binary loss separating triggered from clean
  double clean_acc = 0.0;
  double target_acc = 0.0;
  double asr = 0.0;

  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Batched class probabilities, [N, m].
Tensor forward_probs(const Graph& net, const Tensor& images, int eval_batch = 256);
/// Mean cross-entropy of the net on (images, labels).
double mean_cross_entropy(const Graph& net, const Tensor& images, const std::vector<int>& labels,
                          int eval_batch = 256);

double eval_accuracy(const Graph& net, const Dataset& data);
/// Accuracy restricted to one class; errors when the class is empty.
double eval_class_accuracy(const Graph& net, const Dataset& data, int label);

/// Fraction of non-target samples that the net sends to the target label
/// once their trigger is applied (inputs are clamped back to [0,1]).
/// Errors when every sample already has the target label.
double eval_asr(const Graph& net, const Dataset& data, const TriggerSet& triggers, int target_label);

/// Mean over target-class samples of the clean net's probability on the true
/// label at the triggered input.
double measure_c1_epsilon(const Graph& g_clean, const Dataset& data, const TriggerSet& triggers,
                          int target_label);

struct SimilarityK {
  double k = 0.0;
  double k_shortcut = 0.0;  // distances restricted to the mask complement
};
SimilarityK measure_similarity_k(const TriggerSet& triggers);

/// Mean |(F-G)_t(P(x)) - (F-G)_t(x+P(x))| where the bare trigger is shifted
/// by `bare_shift` and clamped to [0,1] before evaluation.
double measure_c3_tau(const Graph& f_poison, const Graph& g_clean, const Dataset& data,
                      const TriggerSet& triggers, int target_label, float bare_shift = 0.f);

double v_adv(const Graph& f_clean, const Dataset& data, const TriggerSet& triggers);

struct VscConfig {
  int epochs = 40;
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  int batch = 64;
  int mlp_width = 64;  // fallback head when the shape has no conv variant
};

/// Trains a fresh two-layer binary net on {(x+P(x),0)} vs {(x,1)} and returns
/// the final mean of the summed pair loss. The minimum over nets is
/// approximated by this single seeded training run.
double v_sc(const Dataset& data, const TriggerSet& triggers, const VscConfig& cfg, std::uint64_t seed);

struct ShortcutCheck {
  bool separable = false;
  std::optional<LinearWitness> witness;
  double achieved_margin = 0.0;
};

/// Does an affine unit-normal h reach h >= 1-eta1 on the triggered class-0
/// points and h <= eta1 on the class-1 points? Labels must be binary,
/// 0 < eta1 < 0.5. Exact geometric decision via the hull-distance solver.
ShortcutCheck check_binary_shortcut(const Dataset& binary_data, const TriggerSet& triggers,
                                    double eta1);

struct SimpleFeatureReport {
  double k = 0.0;             // max pairwise trigger distance over class-0 samples
  double bound = 0.0;         // 1 - 2*eta1 - k
  double min_slack_shift = 0.0;  // min over pairs of h(x1+P(x0)) - h(x1) - bound
  double min_slack_bare = 0.0;   // min over class-0 x0 of w.P(x0) - bound
  bool ok = false;
};

/// Executable form of the simple-feature margin guarantees for a linear
/// witness: the shift response h(x1+P(x0)) - h(x1) and the bare response
/// w.P(x0) (the offset-free linear part; an offset cancels in the first
/// quantity and the guarantee for the second is stated for offset-free
/// directions) must both reach 1 - 2*eta1 - k. Throws if h violates the
/// margin preconditions on the triggered set.
SimpleFeatureReport verify_simple_feature_bound(const LinearWitness& h, const Dataset& binary_data,
                                                const TriggerSet& triggers, double eta1);

}  // namespace plab
