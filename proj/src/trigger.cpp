#include "plab/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "plab/optim.hpp"
#include "plab/parallel.hpp"
#include "plab/rng.hpp"

#include <nlohmann/json.hpp>

namespace plab {

TriggerKind trigger_kind_from_string(const std::string& s) {
  if (s == "ours") return TriggerKind::kOurs;
  if (s == "rn_linf") return TriggerKind::kRnLinf;
  if (s == "rn_l0") return TriggerKind::kRnL0;
  if (s == "ua") return TriggerKind::kUa;
  if (s == "adv") return TriggerKind::kAdv;
  if (s == "scut") return TriggerKind::kScut;
  throw std::invalid_argument("unknown trigger kind: " + s);
}

std::string to_string(TriggerKind k) {
  switch (k) {
    case TriggerKind::kOurs: return "ours";
    case TriggerKind::kRnLinf: return "rn_linf";
    case TriggerKind::kRnL0: return "rn_l0";
    case TriggerKind::kUa: return "ua";
    case TriggerKind::kAdv: return "adv";
    case TriggerKind::kScut: return "scut";
  }
  return "?";
}

Tensor Mask::complement() const {
  Tensor c = u;
  for (float& v : c.data) v = 1.f - v;
  return c;
}

std::int64_t Mask::zero_count() const { return u.numel() - one_count(); }

std::int64_t Mask::one_count() const {
  std::int64_t n = 0;
  for (float v : u.data) n += (v != 0.f);
  return n;
}

Mask build_mask(const std::vector<int>& image_shape, int corner_h, int corner_w) {
  if (image_shape.size() != 3) throw std::invalid_argument("build_mask: image shape must be [C,H,W]");
  const int c = image_shape[0], h = image_shape[1], w = image_shape[2];
  if (corner_h < 0 || corner_w < 0 || corner_h > h || corner_w > w)
    throw std::invalid_argument("build_mask: corner exceeds image");
  Mask m;
  m.corner_h = corner_h;
  m.corner_w = corner_w;
  m.u = Tensor::full({c, h, w}, 1.f);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < corner_h; ++i)
      for (int j = 0; j < corner_w; ++j) m.u.data[static_cast<std::size_t>((ch * h + i) * w + j)] = 0.f;
  return m;
}

Tensor apply_mask(const Tensor& m, const Tensor& x) {
  if (m.numel() != x.numel()) throw std::invalid_argument("apply_mask: size mismatch");
  Tensor out = x;
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] *= m.data[k];
  return out;
}

Tensor pgd_perturb_batch(const Graph& net, const Tensor& batch, std::span<const int> labels,
                         const PgdParams& p, const Tensor* mask, PgdMode mode,
                         const Tensor* init_delta) {
  if (!(p.budget > 0.f)) throw std::invalid_argument("pgd: budget must be > 0");
  if (p.steps < 1) throw std::invalid_argument("pgd: need at least one step");
  const float step = p.effective_step();
  const float sign = mode == PgdMode::kAscent ? 1.f : -1.f;

  const Node& in = net.nodes()[static_cast<std::size_t>(net.input_node())];
  const std::int64_t per = shape_numel(in.shape);
  Tensor x = batch;
  if (x.shape == in.shape) x.shape.insert(x.shape.begin(), 1);
  const int B = static_cast<int>(x.numel() / per);
  if (static_cast<int>(labels.size()) != B) throw std::invalid_argument("pgd: label count mismatch");
  if (mask && mask->numel() != per) throw std::invalid_argument("pgd: mask size mismatch");

  Tensor delta = Tensor::zeros(x.shape);
  if (init_delta) {
    if (init_delta->numel() != x.numel()) throw std::invalid_argument("pgd: init delta size mismatch");
    std::copy(init_delta->data.begin(), init_delta->data.end(), delta.data.begin());
  }
  Tensor probe = x;
  EvalWorkspace ws;
  for (int s = 0; s < p.steps; ++s) {
    for (std::size_t k = 0; k < probe.data.size(); ++k) probe.data[k] = x.data[k] + delta.data[k];
    forward_loss(net, probe, labels, ws);
    backward(net, ws);
    const Tensor& g = input_grad(net, ws);
    if (!g.all_finite()) throw std::runtime_error("pgd: non-finite gradient");
    for (int bi = 0; bi < B; ++bi) {
      const std::int64_t off = static_cast<std::int64_t>(bi) * per;
      for (std::int64_t k = 0; k < per; ++k) {
        const std::size_t i = static_cast<std::size_t>(off + k);
        float gv = g.data[i];
        float d = delta.data[i] + sign * step * (gv > 0.f ? 1.f : (gv < 0.f ? -1.f : 0.f));
        d = std::clamp(d, -p.budget, p.budget);
        if (mask) d *= mask->data[static_cast<std::size_t>(k)];
        if (p.clamp_image) d = std::clamp(d, -x.data[i], 1.f - x.data[i]);
        delta.data[i] = d;
      }
    }
  }
  return delta;
}

Tensor pgd_perturb(const Graph& net, const Tensor& x, int label, const PgdParams& p,
                   const Mask* mask, PgdMode mode, const Tensor* init_delta) {
  const int labels[1] = {label};
  Tensor d = pgd_perturb_batch(net, x, labels, p, mask ? &mask->u : nullptr, mode, init_delta);
  d.shape = x.shape;
  return d;
}

Tensor pgd_attack(const Graph& net, const Tensor& x, int label, const PgdParams& p, const Mask* mask) {
  return pgd_perturb(net, x, label, p, mask, PgdMode::kAscent);
}

bool TriggerSet::has(int dataset_index) const {
  return std::binary_search(indices.begin(), indices.end(), dataset_index);
}

const Tensor& TriggerSet::delta_for(int dataset_index) const {
  auto it = std::lower_bound(indices.begin(), indices.end(), dataset_index);
  if (it == indices.end() || *it != dataset_index)
    throw std::out_of_range("trigger set has no entry for sample " + std::to_string(dataset_index));
  return deltas[static_cast<std::size_t>(it - indices.begin())];
}

void TriggerSet::check_budget(const Tensor& delta) const {
  if (kind == TriggerKind::kRnL0) {
    for (std::size_t k = 0; k < delta.data.size(); ++k) {
      if (delta.data[k] != 0.f &&
          !std::binary_search(l0_positions.begin(), l0_positions.end(), static_cast<std::int64_t>(k)))
        throw std::runtime_error("trigger budget violated: L0 delta outside the shared positions");
    }
    return;
  }
  if (max_abs(delta) > budget) throw std::runtime_error("trigger budget violated: ||delta||_inf > budget");
}

void TriggerSet::check_all_budgets() const {
  for (const Tensor& d : deltas) check_budget(d);
}

float TriggerSet::max_linf() const {
  float m = 0.f;
  for (const Tensor& d : deltas) m = std::max(m, max_abs(d));
  return m;
}

void save_triggers(const std::filesystem::path& tensor_path, const TriggerSet& ts) {
  save_tensors(tensor_path, ts.deltas);
  nlohmann::json meta;
  meta["kind"] = to_string(ts.kind);
  meta["budget"] = ts.budget;
  meta["seed"] = ts.seed;
  meta["f1_fingerprint"] = ts.f1_fingerprint;
  meta["f2_fingerprint"] = ts.f2_fingerprint;
  meta["l0_count"] = ts.l0_count;
  meta["l0_positions"] = ts.l0_positions;
  meta["indices"] = ts.indices;
  if (ts.mask) {
    meta["mask_corner_h"] = ts.mask->corner_h;
    meta["mask_corner_w"] = ts.mask->corner_w;
    meta["mask_shape"] = ts.mask->u.shape;
  }
  std::ofstream os(tensor_path.string() + ".json");
  os << meta.dump(2) << "\n";
  if (!os) throw std::runtime_error("save_triggers: metadata write failed");
}

TriggerSet load_triggers(const std::filesystem::path& tensor_path) {
  TriggerSet ts;
  ts.deltas = load_tensors(tensor_path);
  std::ifstream is(tensor_path.string() + ".json");
  if (!is) throw std::runtime_error("load_triggers: missing metadata");
  nlohmann::json meta = nlohmann::json::parse(is);
  ts.kind = trigger_kind_from_string(meta.at("kind").get<std::string>());
  ts.budget = meta.at("budget").get<float>();
  ts.seed = meta.value("seed", std::uint64_t{0});
  ts.f1_fingerprint = meta.value("f1_fingerprint", std::string{});
  ts.f2_fingerprint = meta.value("f2_fingerprint", std::string{});
  ts.l0_count = meta.at("l0_count").get<int>();
  ts.l0_positions = meta.at("l0_positions").get<std::vector<std::int64_t>>();
  ts.indices = meta.at("indices").get<std::vector<int>>();
  if (meta.contains("mask_corner_h")) {
    auto shape = meta.at("mask_shape").get<std::vector<int>>();
    ts.mask = build_mask(shape, meta.at("mask_corner_h").get<int>(), meta.at("mask_corner_w").get<int>());
  }
  if (ts.indices.size() != ts.deltas.size()) throw std::runtime_error("load_triggers: index/delta mismatch");
  return ts;
}

Dataset build_t1(const Graph& f1, const Dataset& data, const Mask& mask, const PgdParams& adv_params) {
  data.validate();
  const int n = data.size();
  Dataset t1;
  auto shape = data.sample_shape();
  t1.images = Tensor::zeros({2 * n, shape[0], shape[1], shape[2]});
  t1.labels.resize(static_cast<std::size_t>(2 * n));
  t1.classes = 2;
  t1.name = data.name + "+t1";
  const std::int64_t per = data.sample_numel();
  parallel_for(n, [&](int i) {
    Tensor x = data.sample(i);
    Tensor d = pgd_perturb(f1, x, data.labels[static_cast<std::size_t>(i)], adv_params, &mask,
                           PgdMode::kAscent);
    float* adv_dst = t1.images.data.data() + static_cast<std::int64_t>(2 * i) * per;
    float* clean_dst = adv_dst + per;
    for (std::int64_t k = 0; k < per; ++k) {
      adv_dst[k] = x.data[static_cast<std::size_t>(k)] + d.data[static_cast<std::size_t>(k)];
      clean_dst[k] = x.data[static_cast<std::size_t>(k)];
    }
    t1.labels[static_cast<std::size_t>(2 * i)] = 0;
    t1.labels[static_cast<std::size_t>(2 * i) + 1] = 1;
  });
  return t1;
}

MinMinResult train_minmin_shortcut(Graph& f2, const Dataset& t1, float budget, const Mask& mask,
                                   const MinMinSchedule& sched, std::uint64_t seed) {
  if (!(budget > 0.f)) throw std::invalid_argument("min-min: budget must be > 0");
  const int n = t1.size();
  std::vector<int> class0;
  for (int i = 0; i < n; ++i) {
    const int y = t1.labels[static_cast<std::size_t>(i)];
    if (y != 0 && y != 1) throw std::invalid_argument("min-min: labels must be binary");
    if (y == 0) class0.push_back(i);
  }
  if (class0.empty()) throw std::invalid_argument("min-min: no class-0 samples");

  const Tensor comp = mask.complement();
  const float eps_step = sched.eps_step_size > 0.f ? sched.eps_step_size : budget / 8.f;
  MinMinResult res;
  res.eps.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) res.eps.push_back(Tensor::zeros(t1.sample_shape()));

  OptimState opt;
  opt.lr = sched.lr;
  opt.momentum = sched.momentum;
  opt.weight_decay = sched.weight_decay;
  Rng rng = Rng(seed).split(0x6d6d);

  PgdParams eps_params;
  eps_params.budget = budget;
  eps_params.steps = sched.eps_steps;
  eps_params.step_size = eps_step;
  eps_params.clamp_image = false;  // the objective carries no box constraint

  EvalWorkspace ws;
  for (int round = 0; round < sched.rounds; ++round) {
    // Model update on the currently perturbed set.
    for (int ep = 0; ep < sched.model_epochs; ++ep) {
      std::vector<int> order(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      Rng ernig = rng.split(static_cast<std::uint64_t>(round) * 131 + static_cast<std::uint64_t>(ep));
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(ernig.next_below(i))]);
      for (int start = 0; start < n; start += sched.batch) {
        const int bsz = std::min(sched.batch, n - start);
        auto shape = t1.sample_shape();
        Tensor batch = Tensor::zeros({bsz, shape[0], shape[1], shape[2]});
        std::vector<int> labels(static_cast<std::size_t>(bsz));
        const std::int64_t per = t1.sample_numel();
        for (int bi = 0; bi < bsz; ++bi) {
          const int idx = order[static_cast<std::size_t>(start + bi)];
          const Tensor& e = res.eps[static_cast<std::size_t>(idx)];
          const float* src = t1.images.data.data() + static_cast<std::int64_t>(idx) * per;
          float* dst = batch.data.data() + static_cast<std::int64_t>(bi) * per;
          for (std::int64_t k = 0; k < per; ++k) dst[k] = src[k] + e.data[static_cast<std::size_t>(k)];
          labels[static_cast<std::size_t>(bi)] = t1.labels[static_cast<std::size_t>(idx)];
        }
        forward_loss(f2, batch, labels, ws);
        backward(f2, ws);
        sgd_step(f2, ws, opt);
      }
    }
    if (sched.eps_steps <= 0) continue;
    // Error-minimizing update: each round continues the projected sign walk
    // from the current perturbation, restricted to the mask complement.
    Mask comp_mask;
    comp_mask.u = comp;
    parallel_for(static_cast<int>(class0.size()), [&](int ci) {
      const int idx = class0[static_cast<std::size_t>(ci)];
      Tensor x = t1.sample(idx);
      const Tensor& current = res.eps[static_cast<std::size_t>(idx)];
      Tensor d = pgd_perturb(f2, x, 0, eps_params, &comp_mask, PgdMode::kDescent, &current);
      res.eps[static_cast<std::size_t>(idx)] = std::move(d);
    });
  }
  return res;
}

Tensor compose_trigger(const Tensor& x, int label, const Graph& f1, const Graph& f2,
                       const Mask& mask, float budget, const PgdParams& adv_params,
                       const PgdParams& scut_params) {
  PgdParams ap = adv_params;
  ap.budget = budget;
  PgdParams sp = scut_params;
  sp.budget = budget;
  sp.clamp_image = false;

  Tensor delta_adv = pgd_perturb(f1, x, label, ap, &mask, PgdMode::kAscent);
  Tensor xa = x;
  for (std::size_t k = 0; k < xa.data.size(); ++k) xa.data[k] += delta_adv.data[k];

  Mask comp;
  comp.u = mask.complement();
  Tensor delta_scut = pgd_perturb(f2, xa, 0, sp, &comp, PgdMode::kDescent);

  Tensor p = delta_adv;
  for (std::size_t k = 0; k < p.data.size(); ++k) p.data[k] += delta_scut.data[k];
  return p;
}

TriggerSet forge_triggers(const Graph& f1, const Graph& f2, const Mask& mask, float budget,
                          const PgdParams& adv_params, const PgdParams& scut_params,
                          const Dataset& data, std::span<const int> indices) {
  TriggerSet ts;
  ts.kind = TriggerKind::kOurs;
  ts.budget = budget;
  ts.mask = mask;
  ts.indices.assign(indices.begin(), indices.end());
  std::sort(ts.indices.begin(), ts.indices.end());
  ts.deltas.resize(ts.indices.size());
  parallel_for(static_cast<int>(ts.indices.size()), [&](int k) {
    const int idx = ts.indices[static_cast<std::size_t>(k)];
    ts.deltas[static_cast<std::size_t>(k)] =
        compose_trigger(data.sample(idx), data.labels[static_cast<std::size_t>(idx)], f1, f2, mask,
                        budget, adv_params, scut_params);
  });
  ts.check_all_budgets();
  return ts;
}

namespace {

TriggerSet shared_delta_set(TriggerKind kind, float budget, const Tensor& shared,
                            std::span<const int> indices) {
  TriggerSet ts;
  ts.kind = kind;
  ts.budget = budget;
  ts.indices.assign(indices.begin(), indices.end());
  std::sort(ts.indices.begin(), ts.indices.end());
  ts.deltas.assign(ts.indices.size(), shared);
  return ts;
}

}  // namespace

TriggerSet baseline_trigger(TriggerKind kind, const BaselineParams& params, const Dataset& data,
                            std::span<const int> indices, std::uint64_t seed) {
  data.validate();
  auto shape = data.sample_shape();
  const std::int64_t per = data.sample_numel();
  Rng rng = Rng(seed).split(static_cast<std::uint64_t>(kind));

  switch (kind) {
    case TriggerKind::kRnLinf: {
      if (!(params.budget > 0.f)) throw std::invalid_argument("rn_linf: budget must be > 0");
      Tensor noise = Tensor::zeros(shape);
      for (float& v : noise.data) v = rng.bernoulli(0.5) ? params.budget : -params.budget;
      auto ts = shared_delta_set(kind, params.budget, noise, indices);
      ts.seed = seed;
      ts.check_all_budgets();
      return ts;
    }
    case TriggerKind::kRnL0: {
      if (params.l0_count < 1 || params.l0_count > per)
        throw std::invalid_argument("rn_l0: position count out of range");
      std::vector<std::int64_t> all(static_cast<std::size_t>(per));
      for (std::int64_t k = 0; k < per; ++k) all[static_cast<std::size_t>(k)] = k;
      for (std::size_t i = all.size(); i > 1; --i)
        std::swap(all[i - 1], all[static_cast<std::size_t>(rng.next_below(i))]);
      all.resize(static_cast<std::size_t>(params.l0_count));
      std::sort(all.begin(), all.end());
      TriggerSet ts;
      ts.kind = kind;
      ts.budget = 1.f;  // deltas are -x at the shared positions
      ts.seed = seed;
      ts.l0_count = params.l0_count;
      ts.l0_positions = all;
      ts.indices.assign(indices.begin(), indices.end());
      std::sort(ts.indices.begin(), ts.indices.end());
      for (int idx : ts.indices) {
        Tensor x = data.sample(idx);
        Tensor d = Tensor::zeros(shape);
        for (std::int64_t posn : all) d.data[static_cast<std::size_t>(posn)] = -x.data[static_cast<std::size_t>(posn)];
        ts.deltas.push_back(std::move(d));
      }
      ts.check_all_budgets();
      return ts;
    }
    case TriggerKind::kUa: {
      if (!params.f1) throw std::invalid_argument("ua: needs the clean-trained network");
      PgdParams p = params.pgd;
      p.budget = params.budget;
      const float step = p.effective_step();
      Tensor v = Tensor::zeros(shape);
      EvalWorkspace ws;
      std::vector<int> order(indices.begin(), indices.end());
      for (int ep = 0; ep < params.ua_epochs; ++ep) {
        Rng ernig = rng.split(static_cast<std::uint64_t>(ep));
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[static_cast<std::size_t>(ernig.next_below(i))]);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(params.ua_batch)) {
          const int bsz = static_cast<int>(std::min<std::size_t>(params.ua_batch, order.size() - start));
          Tensor batch = Tensor::zeros({bsz, shape[0], shape[1], shape[2]});
          std::vector<int> labels(static_cast<std::size_t>(bsz));
          for (int bi = 0; bi < bsz; ++bi) {
            const int idx = order[start + static_cast<std::size_t>(bi)];
            Tensor x = data.sample(idx);
            float* dst = batch.data.data() + static_cast<std::int64_t>(bi) * per;
            for (std::int64_t k = 0; k < per; ++k)
              dst[k] = x.data[static_cast<std::size_t>(k)] + v.data[static_cast<std::size_t>(k)];
            labels[static_cast<std::size_t>(bi)] = data.labels[static_cast<std::size_t>(idx)];
          }
          forward_loss(*params.f1, batch, labels, ws);
          backward(*params.f1, ws);
          const Tensor& g = input_grad(*params.f1, ws);
          // Ascent on the batch-averaged gradient sign, projected each time.
          for (std::int64_t k = 0; k < per; ++k) {
            float s = 0.f;
            for (int bi = 0; bi < bsz; ++bi) s += g.data[static_cast<std::size_t>(bi * per + k)];
            float d = v.data[static_cast<std::size_t>(k)] + step * (s > 0.f ? 1.f : (s < 0.f ? -1.f : 0.f));
            v.data[static_cast<std::size_t>(k)] = std::clamp(d, -params.budget, params.budget);
          }
        }
      }
      auto ts = shared_delta_set(kind, params.budget, v, indices);
      ts.seed = seed;
      ts.check_all_budgets();
      return ts;
    }
    case TriggerKind::kAdv: {
      if (!params.f1) throw std::invalid_argument("adv: needs the clean-trained network");
      PgdParams p = params.pgd;
      p.budget = params.budget;
      TriggerSet ts;
      ts.kind = kind;
      ts.budget = params.budget;
      ts.seed = seed;
      ts.indices.assign(indices.begin(), indices.end());
      std::sort(ts.indices.begin(), ts.indices.end());
      ts.deltas.resize(ts.indices.size());
      parallel_for(static_cast<int>(ts.indices.size()), [&](int k) {
        const int idx = ts.indices[static_cast<std::size_t>(k)];
        ts.deltas[static_cast<std::size_t>(k)] = pgd_perturb(
            *params.f1, data.sample(idx), data.labels[static_cast<std::size_t>(idx)], p, nullptr,
            PgdMode::kAscent);
      });
      ts.check_all_budgets();
      return ts;
    }
    case TriggerKind::kScut: {
      if (!params.f2) throw std::invalid_argument("scut: needs the min-min trained network");
      PgdParams p = params.pgd;
      p.budget = params.budget;
      p.clamp_image = false;
      TriggerSet ts;
      ts.kind = kind;
      ts.budget = params.budget;
      ts.seed = seed;
      ts.indices.assign(indices.begin(), indices.end());
      std::sort(ts.indices.begin(), ts.indices.end());
      ts.deltas.resize(ts.indices.size());
      parallel_for(static_cast<int>(ts.indices.size()), [&](int k) {
        const int idx = ts.indices[static_cast<std::size_t>(k)];
        ts.deltas[static_cast<std::size_t>(k)] =
            pgd_perturb(*params.f2, data.sample(idx), 0, p, nullptr, PgdMode::kDescent);
      });
      ts.check_all_budgets();
      return ts;
    }
    case TriggerKind::kOurs:
      throw std::invalid_argument("baseline_trigger: 'ours' is produced by forge_triggers");
  }
  throw std::invalid_argument("baseline_trigger: bad kind");
}

}  // namespace plab
