#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plab/data.hpp"
#include "plab/graph.hpp"
#include "plab/tensor.hpp"

namespace plab {

enum class TriggerKind { kOurs, kRnLinf, kRnL0, kUa, kAdv, kScut };

TriggerKind trigger_kind_from_string(const std::string& s);
std::string to_string(TriggerKind k);

/// Binary mask over an image. The corner block rows [0,corner_h) x cols
/// [0,corner_w) is 0 across all channels, everything else is 1. The
/// complement 1-u is the exact logical negation.
struct Mask {
  Tensor u;  // [C,H,W], entries in {0,1}
  int corner_h = 0;
  int corner_w = 0;

  Tensor complement() const;
  std::int64_t zero_count() const;
  std::int64_t one_count() const;
};

Mask build_mask(const std::vector<int>& image_shape, int corner_h, int corner_w);
Tensor apply_mask(const Tensor& m, const Tensor& x);  // elementwise product

struct PgdParams {
  float budget = 16.f / 255.f;  // L-inf radius
  int steps = 8;
  float step_size = 0.f;  // 0 means budget / 8
  bool clamp_image = true;  // keep x + delta inside [0,1] each step

  float effective_step() const { return step_size > 0.f ? step_size : budget / 8.f; }
};

enum class PgdMode { kAscent, kDescent };

/// Sign-gradient PGD from a zero start (or from init_delta when given).
/// Ascent maximizes the cross-entropy of `labels` (untargeted); descent
/// minimizes it (targeted). Each step the perturbation is multiplied by the
/// mask, projected to the L-inf ball, and (when clamp_image) kept so that
/// x + delta stays in [0,1]. Masked coordinates are therefore zero at every
/// step.
Tensor pgd_perturb_batch(const Graph& net, const Tensor& batch, std::span<const int> labels,
                         const PgdParams& p, const Tensor* mask, PgdMode mode,
                         const Tensor* init_delta = nullptr);
Tensor pgd_perturb(const Graph& net, const Tensor& x, int label, const PgdParams& p,
                   const Mask* mask, PgdMode mode, const Tensor* init_delta = nullptr);

/// The adversarial-noise generator: PGD ascent on the given network.
Tensor pgd_attack(const Graph& net, const Tensor& x, int label, const PgdParams& p, const Mask* mask);

/// Per-sample perturbations tied to dataset indices, with the budget they
/// were generated under. L-inf kinds satisfy max |delta| <= budget exactly;
/// the L0 kind records the shared positions it blanks out.
struct TriggerSet {
  TriggerKind kind = TriggerKind::kOurs;
  float budget = 0.f;
  std::uint64_t seed = 0;  // generation seed; 0 for the deterministic composed kind
  std::string f1_fingerprint;  // sha256 of the generator checkpoints, when used
  std::string f2_fingerprint;
  int l0_count = 0;
  std::vector<std::int64_t> l0_positions;
  std::optional<Mask> mask;
  std::vector<int> indices;   // ascending dataset indices
  std::vector<Tensor> deltas; // parallel to indices

  bool has(int dataset_index) const;
  const Tensor& delta_for(int dataset_index) const;
  void check_budget(const Tensor& delta) const;
  void check_all_budgets() const;
  float max_linf() const;
};

void save_triggers(const std::filesystem::path& tensor_path, const TriggerSet& ts);
TriggerSet load_triggers(const std::filesystem::path& tensor_path);

/// Alternation schedule for the error-minimizing (min-min) training of the
/// binary shortcut network. The defaults mirror the desk-scale recipe:
/// `rounds` rounds of `model_epochs` SGD epochs followed by `eps_steps`
/// sign-descent steps on every class-0 perturbation.
struct MinMinSchedule {
  int rounds = 10;
  int model_epochs = 2;
  int eps_steps = 20;
  float eps_step_size = 0.f;  // 0 means budget / 8
  int batch = 64;
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
};

struct MinMinResult {
  std::vector<Tensor> eps;  // one per t1 sample; zero tensors for class-1 rows
};

/// Alternating minimization over the network and the class-0 perturbations.
/// eps is restricted to the mask complement (1-u) and projected to
/// ||eps||_inf <= budget after every step; class-1 rows keep eps = 0.
/// Deterministic for a fixed seed. Throws if t1 has no class-0 sample.
MinMinResult train_minmin_shortcut(Graph& f2, const Dataset& t1, float budget, const Mask& mask,
                                   const MinMinSchedule& sched, std::uint64_t seed);

/// Combined trigger for one sample:
///   delta_adv  = masked PGD ascent on f1 at (x, y)        (support: u)
///   x_a        = x + delta_adv
///   delta_scut = masked PGD descent on f2 at (x_a, 0)     (support: 1-u)
///   P(x)       = delta_adv + delta_scut,  ||P||_inf <= budget.
Tensor compose_trigger(const Tensor& x, int label, const Graph& f1, const Graph& f2,
                       const Mask& mask, float budget, const PgdParams& adv_params,
                       const PgdParams& scut_params);

struct BaselineParams {
  float budget = 16.f / 255.f;
  int l0_count = 200;
  PgdParams pgd;                 // adv / scut / ua inner steps
  int ua_epochs = 5;
  int ua_batch = 32;
  const Graph* f1 = nullptr;     // required for ua / adv
  const Graph* f2 = nullptr;     // required for scut (trained with a full-support mask)
};

/// Reference poisons: shared Bernoulli +-budget noise (rn_linf), shared
/// zeroed positions (rn_l0), a universal perturbation accumulated from
/// batch-averaged gradient signs (ua; simplified variant, see README),
/// per-sample PGD (adv), and the min-min shortcut with full-image support
/// (scut).
TriggerSet baseline_trigger(TriggerKind kind, const BaselineParams& params, const Dataset& data,
                            std::span<const int> indices, std::uint64_t seed);

/// Algorithm step S4 applied to every requested sample with the saved f1/f2.
TriggerSet forge_triggers(const Graph& f1, const Graph& f2, const Mask& mask, float budget,
                          const PgdParams& adv_params, const PgdParams& scut_params,
                          const Dataset& data, std::span<const int> indices);

/// Step S2: the paired binary set {(x_adv, 0), (x, 1)} over the given data.
Dataset build_t1(const Graph& f1, const Dataset& data, const Mask& mask, const PgdParams& adv_params);

}  // namespace plab
