#include <doctest.h>

#include <cmath>

#include "plab/data.hpp"
#include "plab/linsep.hpp"
#include "plab/metrics.hpp"
#include "plab/model_zoo.hpp"
#include "plab/rng.hpp"
#include "plab/trainer.hpp"
#include "plab/trigger.hpp"

using namespace plab;

namespace {

NetworkSpec mlp_spec(int width, int depth, int c, int h, int w, int classes) {
  NetworkSpec s;
  s.kind = NetKind::kMlp;
  s.width = width;
  s.depth = depth;
  s.in_c = c;
  s.in_h = h;
  s.in_w = w;
  s.classes = classes;
  return s;
}

// Linear two-logit model: logit_0 = 0, logit_1 = w.x, so the loss gradient at
// any x points along w (up to a positive factor).
Graph linear_logit_model(const std::vector<float>& w) {
  Graph g;
  const int n = static_cast<int>(w.size());
  int x = g.add_input({1, 1, n});
  int flat = g.reshape(x, {n});
  Tensor wm = Tensor::zeros({n, 2});
  for (int i = 0; i < n; ++i) wm.data[static_cast<std::size_t>(2 * i + 1)] = w[static_cast<std::size_t>(i)];
  int logits = g.matmul(flat, g.add_param(wm));
  int p = g.softmax(logits);
  g.set_output(p);
  g.set_loss(g.cross_entropy(p));
  return g;
}

}  // namespace

TEST_CASE("mask zeros exactly the corner block") {
  Mask m = build_mask({3, 32, 32}, 8, 8);
  CHECK(m.zero_count() == 3 * 64);
  CHECK(m.one_count() == 3 * (1024 - 64));
  // complement is the exact logical negation
  Tensor c = m.complement();
  for (std::size_t i = 0; i < c.data.size(); ++i) CHECK(c.data[i] + m.u.data[i] == 1.f);

  Mask all_ones = build_mask({1, 4, 4}, 0, 0);
  CHECK(all_ones.zero_count() == 0);
  Mask all_zeros = build_mask({1, 4, 4}, 4, 4);
  CHECK(all_zeros.one_count() == 0);
  CHECK_THROWS_AS(build_mask({1, 4, 4}, 5, 1), std::invalid_argument);
}

TEST_CASE("one-step masked pgd on a linear model is the sign of w") {
  const std::vector<float> w{0.8f, -1.2f, 0.3f, -0.05f};
  Graph f = linear_logit_model(w);
  Mask mask = build_mask({1, 1, 4}, 0, 0);
  mask.u.data[2] = 0.f;  // kill coordinate 2

  PgdParams p;
  p.budget = 0.25f;
  p.steps = 1;
  p.step_size = 0.5f;  // >= budget, so one step saturates the ball
  p.clamp_image = true;

  Tensor x = Tensor({1, 1, 4}, {0.5f, 0.5f, 0.5f, 0.5f});  // interior, clamp never binds
  Tensor delta = pgd_attack(f, x, 0, p, &mask);
  CHECK(delta.data[0] == 0.25f);
  CHECK(delta.data[1] == -0.25f);
  CHECK(delta.data[2] == 0.f);  // masked coordinate stays zero at every step
  CHECK(delta.data[3] == -0.25f);
}

TEST_CASE("pgd respects the budget exactly over many steps") {
  Rng rng(5);
  std::vector<float> w(6);
  for (auto& v : w) v = rng.uniform(-1.f, 1.f);
  Graph f = linear_logit_model(w);
  PgdParams p;
  p.budget = 0.1f;
  p.steps = 20;
  Tensor x = Tensor::zeros({1, 1, 6});
  for (auto& v : x.data) v = rng.uniform(0.2f, 0.8f);
  Tensor delta = pgd_attack(f, x, 1, p, nullptr);
  CHECK(max_abs(delta) <= p.budget);
  for (std::size_t i = 0; i < delta.data.size(); ++i) {
    CHECK(x.data[i] + delta.data[i] >= 0.f);
    CHECK(x.data[i] + delta.data[i] <= 1.f);
  }
}

TEST_CASE("adversarial ascent raises the per-sample loss on a trained net") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 60;
  spec.c = 1;
  spec.h = 1;
  spec.w = 6;
  spec.sigma = 0.08f;
  Dataset ds = synth_clusters(spec, 31);
  Graph f1 = build_mlp(mlp_spec(16, 2, 1, 1, 6, 2), 7);
  TrainConfig tc;
  tc.epochs = 30;
  tc.lr = 0.05f;
  tc.batch = 16;
  tc.seed = 3;
  train(f1, ds, tc);

  PgdParams p;
  p.budget = 8.f / 255.f;
  p.steps = 8;
  EvalWorkspace ws;
  int raised = 0;
  for (int i = 0; i < ds.size(); ++i) {
    Tensor x = ds.sample(i);
    const int y = ds.labels[static_cast<std::size_t>(i)];
    std::vector<int> labels{y};
    const float before = forward_loss(f1, x, labels, ws);
    Tensor d = pgd_attack(f1, x, y, p, nullptr);
    Tensor xa = x;
    for (std::size_t k = 0; k < xa.data.size(); ++k) xa.data[k] += d.data[k];
    const float after = forward_loss(f1, xa, labels, ws);
    raised += after > before;
  }
  CHECK(static_cast<double>(raised) / ds.size() >= 0.95);
}

TEST_CASE("min-min with a zero-round schedule returns a zero eps map") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 10;
  spec.c = 1;
  spec.h = 1;
  spec.w = 2;
  Dataset t1 = synth_clusters(spec, 3);
  Graph f2 = build_mlp(mlp_spec(8, 1, 1, 1, 2, 2), 5);
  MinMinSchedule sched;
  sched.rounds = 0;
  Mask mask = build_mask({1, 1, 2}, 0, 0);
  auto res = train_minmin_shortcut(f2, t1, 0.5f, mask, sched, 1);
  for (const auto& e : res.eps)
    for (float v : e.data) CHECK(v == 0.f);
}

TEST_CASE("min-min eps maps obey budget and mask-complement support") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 20;
  spec.c = 1;
  spec.h = 2;
  spec.w = 2;
  spec.sigma = 0.05f;
  Dataset t1 = synth_clusters(spec, 13);
  Graph f2 = build_mlp(mlp_spec(12, 1, 1, 2, 2, 2), 5);
  MinMinSchedule sched;
  sched.rounds = 3;
  sched.model_epochs = 1;
  sched.eps_steps = 10;
  Mask mask = build_mask({1, 2, 2}, 1, 1);  // eps support: the single corner cell
  const float budget = 0.3f;
  auto res = train_minmin_shortcut(f2, t1, budget, mask, sched, 1);
  const Tensor comp = mask.complement();
  bool any_nonzero = false;
  for (int i = 0; i < t1.size(); ++i) {
    const auto& e = res.eps[static_cast<std::size_t>(i)];
    CHECK(max_abs(e) <= budget);
    for (std::size_t k = 0; k < e.data.size(); ++k)
      if (comp.data[k] == 0.f) CHECK(e.data[k] == 0.f);
    if (t1.labels[static_cast<std::size_t>(i)] == 1) {
      for (float v : e.data) CHECK(v == 0.f);  // class-1 rows keep eps = 0
    } else if (max_abs(e) > 0.f) {
      any_nonzero = true;
    }
  }
  CHECK(any_nonzero);
  CHECK_THROWS_AS(train_minmin_shortcut(f2, Dataset{t1.images, std::vector<int>(t1.labels.size(), 1), 2, "x"},
                                        budget, mask, sched, 1),
                  std::invalid_argument);
}

TEST_CASE("min-min turns the collinear three-cluster set into a shortcut") {
  // Middle cluster is class 0, outer clusters class 1: linearly inseparable.
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 30;
  spec.c = 1;
  spec.h = 1;
  spec.w = 2;
  spec.sigma = 0.015f;
  spec.centers = {{0.5f, 0.5f}, {0.f, 0.f}};  // class-0 center in the middle
  Dataset ds = synth_clusters(spec, 17);
  // Rebuild as three clusters: class 1 at both ends, class 0 between them.
  Rng rng(23);
  for (int i = 0; i < ds.size(); ++i) {
    const bool outer_hi = i % 2 == 0;
    if (ds.labels[static_cast<std::size_t>(i)] == 1) {
      Tensor x = ds.sample(i);
      x.data[0] = (outer_hi ? 0.9f : 0.1f) + 0.015f * rng.normal();
      x.data[1] = 0.5f + 0.015f * rng.normal();
      ds.set_sample(i, x);
    }
  }

  const double eta1 = 0.4;
  TriggerSet zero;
  zero.kind = TriggerKind::kScut;
  zero.budget = 1.f;
  for (int i = 0; i < ds.size(); ++i) {
    zero.indices.push_back(i);
    zero.deltas.push_back(Tensor::zeros(ds.sample_shape()));
  }
  CHECK_FALSE(check_binary_shortcut(ds, zero, eta1).separable);

  Graph f2 = build_mlp(mlp_spec(16, 1, 1, 1, 2, 2), 5);
  MinMinSchedule sched;
  sched.rounds = 10;
  sched.model_epochs = 2;
  sched.eps_steps = 20;
  sched.batch = 16;
  Mask mask = build_mask({1, 1, 2}, 1, 2);  // zero block covers the image: full eps support
  const float budget = 0.9f;
  auto res = train_minmin_shortcut(f2, ds, budget, mask, sched, 11);

  TriggerSet learned;
  learned.kind = TriggerKind::kScut;
  learned.budget = budget;
  for (int i = 0; i < ds.size(); ++i) {
    learned.indices.push_back(i);
    learned.deltas.push_back(res.eps[static_cast<std::size_t>(i)]);
  }
  auto check = check_binary_shortcut(ds, learned, eta1);
  CHECK(check.separable);
  REQUIRE(check.witness.has_value());
}

TEST_CASE("composed trigger splits along the mask supports") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 25;
  spec.c = 1;
  spec.h = 4;
  spec.w = 4;
  spec.sigma = 0.05f;
  Dataset ds = synth_clusters(spec, 41);
  Graph f1 = build_mlp(mlp_spec(12, 1, 1, 4, 4, 2), 7);
  Graph f2 = build_mlp(mlp_spec(12, 1, 1, 4, 4, 2), 8);
  TrainConfig tc;
  tc.epochs = 8;
  tc.lr = 0.05f;
  tc.batch = 16;
  tc.seed = 3;
  train(f1, ds, tc);

  Mask mask = build_mask({1, 4, 4}, 2, 2);
  const float budget = 0.2f;
  PgdParams p;
  p.budget = budget;
  p.steps = 6;

  Tensor x = ds.sample(0);
  Tensor trig = compose_trigger(x, ds.labels[0], f1, f2, mask, budget, p, p);
  CHECK(max_abs(trig) <= budget);

  const Tensor comp = mask.complement();
  Tensor u_part = apply_mask(mask.u, trig);
  Tensor c_part = apply_mask(comp, trig);
  // Disjoint supports that add back to the trigger.
  for (std::size_t k = 0; k < trig.data.size(); ++k) {
    CHECK(u_part.data[k] * c_part.data[k] == 0.f);
    CHECK(u_part.data[k] + c_part.data[k] == trig.data[k]);
  }

  // Degenerate masks reduce to the pure parts.
  Mask ones = build_mask({1, 4, 4}, 0, 0);
  Tensor adv_only = compose_trigger(x, ds.labels[0], f1, f2, ones, budget, p, p);
  Tensor adv_ref = pgd_attack(f1, x, ds.labels[0], p, &ones);
  CHECK(adv_only.data == adv_ref.data);

  Mask zeros = build_mask({1, 4, 4}, 4, 4);
  Tensor scut_only = compose_trigger(x, ds.labels[0], f1, f2, zeros, budget, p, p);
  Mask full;
  full.u = zeros.complement();
  PgdParams sp = p;
  sp.clamp_image = false;
  Tensor scut_ref = pgd_perturb(f2, x, 0, sp, &full, PgdMode::kDescent);
  CHECK(scut_only.data == scut_ref.data);
}

TEST_CASE("rn_linf is one shared vector at the budget") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 15;
  spec.c = 1;
  spec.h = 3;
  spec.w = 3;
  Dataset ds = synth_clusters(spec, 6);
  std::vector<int> idx{0, 3, 5, 7};
  BaselineParams bp;
  bp.budget = 16.f / 255.f;
  TriggerSet ts = baseline_trigger(TriggerKind::kRnLinf, bp, ds, idx, 9);
  REQUIRE(ts.deltas.size() == 4);
  for (const auto& d : ts.deltas) CHECK(d.data == ts.deltas[0].data);
  for (float v : ts.deltas[0].data) CHECK(std::abs(v) == bp.budget);
  auto sim = measure_similarity_k(ts);
  CHECK(sim.k == 0.0);  // shared vector: zero pairwise distance
}

TEST_CASE("rn_l0 blanks the same positions in every sample") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 10;
  spec.c = 1;
  spec.h = 4;
  spec.w = 4;
  spec.sigma = 0.2f;
  Dataset ds = synth_clusters(spec, 61);
  std::vector<int> idx{0, 1, 2, 3, 4};
  BaselineParams bp;
  bp.l0_count = 5;
  TriggerSet ts = baseline_trigger(TriggerKind::kRnL0, bp, ds, idx, 10);
  CHECK(ts.l0_positions.size() == 5);
  for (std::size_t i = 0; i < ts.indices.size(); ++i) {
    Tensor poisoned = ds.sample(ts.indices[i]);
    for (std::size_t k = 0; k < poisoned.data.size(); ++k)
      poisoned.data[k] += ts.deltas[i].data[k];
    for (std::int64_t pos : ts.l0_positions) CHECK(poisoned.data[static_cast<std::size_t>(pos)] == 0.f);
    // untouched elsewhere
    int modified = 0;
    for (std::size_t k = 0; k < poisoned.data.size(); ++k)
      if (ts.deltas[i].data[k] != 0.f) ++modified;
    CHECK(modified <= 5);
  }
  CHECK_THROWS_AS(baseline_trigger(TriggerKind::kRnL0, BaselineParams{.l0_count = 999}, ds, idx, 1),
                  std::invalid_argument);
}

TEST_CASE("adv baseline produces per-sample triggers inside the budget") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 20;
  spec.c = 1;
  spec.h = 1;
  spec.w = 5;
  spec.sigma = 0.08f;
  Dataset ds = synth_clusters(spec, 77);
  Graph f1 = build_mlp(mlp_spec(12, 1, 1, 1, 5, 2), 3);
  TrainConfig tc;
  tc.epochs = 15;
  tc.lr = 0.05f;
  tc.batch = 8;
  tc.seed = 4;
  train(f1, ds, tc);
  std::vector<int> idx{0, 1, 2, 3, 4, 20, 21, 22, 23, 24};  // both classes
  BaselineParams bp;
  bp.budget = 0.12f;
  bp.pgd.steps = 6;
  bp.f1 = &f1;
  TriggerSet ts = baseline_trigger(TriggerKind::kAdv, bp, ds, idx, 2);
  CHECK(ts.max_linf() <= bp.budget);
  bool differ = false;
  for (std::size_t i = 1; i < ts.deltas.size(); ++i)
    if (ts.deltas[i].data != ts.deltas[0].data) differ = true;
  CHECK(differ);  // per-sample triggers generally differ
}

TEST_CASE("ua baseline is a shared perturbation within budget") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 15;
  spec.c = 1;
  spec.h = 1;
  spec.w = 4;
  spec.sigma = 0.1f;
  Dataset ds = synth_clusters(spec, 55);
  Graph f1 = build_mlp(mlp_spec(10, 1, 1, 1, 4, 2), 3);
  TrainConfig tc;
  tc.epochs = 10;
  tc.lr = 0.05f;
  tc.seed = 4;
  train(f1, ds, tc);
  std::vector<int> idx;
  for (int i = 0; i < ds.size(); ++i) idx.push_back(i);
  BaselineParams bp;
  bp.budget = 0.1f;
  bp.ua_epochs = 3;
  bp.f1 = &f1;
  TriggerSet ts = baseline_trigger(TriggerKind::kUa, bp, ds, idx, 2);
  CHECK(ts.max_linf() <= bp.budget);
  for (const auto& d : ts.deltas) CHECK(d.data == ts.deltas[0].data);
}

TEST_CASE("trigger persistence round trip") {
  namespace fs = std::filesystem;
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 5;
  spec.c = 1;
  spec.h = 2;
  spec.w = 2;
  Dataset ds = synth_clusters(spec, 6);
  BaselineParams bp;
  bp.budget = 0.05f;
  TriggerSet ts = baseline_trigger(TriggerKind::kRnLinf, bp, ds, std::vector<int>{1, 2, 4}, 9);
  ts.mask = build_mask({1, 2, 2}, 1, 1);
  const fs::path path = fs::temp_directory_path() / "plab_triggers_test.plabt";
  save_triggers(path, ts);
  TriggerSet loaded = load_triggers(path);
  CHECK(loaded.kind == ts.kind);
  CHECK(loaded.budget == ts.budget);
  CHECK(loaded.indices == ts.indices);
  REQUIRE(loaded.deltas.size() == ts.deltas.size());
  for (std::size_t i = 0; i < ts.deltas.size(); ++i) CHECK(loaded.deltas[i].data == ts.deltas[i].data);
  REQUIRE(loaded.mask.has_value());
  CHECK(loaded.mask->u.data == ts.mask->u.data);
  fs::remove(path);
  fs::remove(path.string() + ".json");
}

TEST_CASE("per-sample trigger generation does not depend on the worker count") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 12;
  spec.c = 1;
  spec.h = 4;
  spec.w = 4;
  spec.sigma = 0.08f;
  Dataset ds = synth_clusters(spec, 3);
  Graph f1 = build_mlp(mlp_spec(10, 1, 1, 4, 4, 2), 7);
  Graph f2 = build_mlp(mlp_spec(10, 1, 1, 4, 4, 2), 8);
  TrainConfig tc;
  tc.epochs = 6;
  tc.lr = 0.05f;
  tc.batch = 8;
  tc.seed = 3;
  train(f1, ds, tc);
  Mask mask = build_mask({1, 4, 4}, 2, 2);
  PgdParams p;
  p.budget = 0.1f;
  p.steps = 4;
  std::vector<int> idx;
  for (int i = 0; i < ds.size(); ++i) idx.push_back(i);

  setenv("PLAB_THREADS", "1", 1);
  TriggerSet a = forge_triggers(f1, f2, mask, 0.1f, p, p, ds, idx);
  setenv("PLAB_THREADS", "4", 1);
  TriggerSet b = forge_triggers(f1, f2, mask, 0.1f, p, p, ds, idx);
  unsetenv("PLAB_THREADS");
  REQUIRE(a.deltas.size() == b.deltas.size());
  for (std::size_t i = 0; i < a.deltas.size(); ++i) CHECK(a.deltas[i].data == b.deltas[i].data);
}
