#include "plab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "plab/optim.hpp"
#include "plab/rng.hpp"
#include "plab/sha256.hpp"
#include "plab/svg.hpp"

namespace plab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void expect_keys(const json& j, const char* ctx, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw std::invalid_argument(std::string("config: ") + ctx + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::invalid_argument(std::string("config: unknown key '") + key + "' in " + ctx);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

TrainConfig parse_train(const json& j, const char* ctx, TrainConfig t) {
  expect_keys(j, ctx,
              {"epochs", "lr", "lr_milestones", "lr_factor", "momentum", "weight_decay", "batch",
               "augment", "adversarial"});
  t.epochs = get_or(j, "epochs", t.epochs);
  t.lr = get_or(j, "lr", t.lr);
  t.lr_milestones = get_or(j, "lr_milestones", t.lr_milestones);
  t.lr_factor = get_or(j, "lr_factor", t.lr_factor);
  t.momentum = get_or(j, "momentum", t.momentum);
  t.weight_decay = get_or(j, "weight_decay", t.weight_decay);
  t.batch = get_or(j, "batch", t.batch);
  t.augment = get_or(j, "augment", t.augment);
  if (j.contains("adversarial")) {
    if (j.at("adversarial").is_null()) {
      t.adversarial.reset();
    } else {
      expect_keys(j.at("adversarial"), "adversarial", {"steps", "budget", "step_size"});
      AdvTrainParams a;
      a.steps = get_or(j.at("adversarial"), "steps", a.steps);
      a.budget = get_or(j.at("adversarial"), "budget", a.budget);
      a.step_size = get_or(j.at("adversarial"), "step_size", a.step_size);
      t.adversarial = a;
    }
  }
  return t;
}

json train_to_json(const TrainConfig& t) {
  json j{{"epochs", t.epochs},       {"lr", t.lr},
         {"lr_milestones", t.lr_milestones}, {"lr_factor", t.lr_factor},
         {"momentum", t.momentum},   {"weight_decay", t.weight_decay},
         {"batch", t.batch},         {"augment", t.augment}};
  if (t.adversarial)
    j["adversarial"] = {{"steps", t.adversarial->steps},
                        {"budget", t.adversarial->budget},
                        {"step_size", t.adversarial->step_size}};
  return j;
}

NetworkSpec parse_net(const json& j, const char* ctx) {
  expect_keys(j, ctx, {"kind", "width", "depth", "classes"});
  NetworkSpec s;
  s.kind = net_kind_from_string(j.at("kind").get<std::string>());
  s.width = get_or(j, "width", s.width);
  s.depth = get_or(j, "depth", s.depth);
  s.classes = get_or(j, "classes", s.classes);
  return s;
}

json net_to_json(const NetworkSpec& s) {
  return json{{"kind", to_string(s.kind)}, {"width", s.width}, {"depth", s.depth}, {"classes", s.classes}};
}

}  // namespace

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path.string());
  return from_json(json::parse(is));
}

RunConfig RunConfig::from_json(const json& j) {
  expect_keys(j, "run config",
              {"version", "dataset", "victim", "f1", "f2", "f1_fraction", "trigger", "poison",
               "train_f1", "train_victim", "minmin", "metrics", "bounds", "seeds"});
  if (j.at("version").get<int>() != 1) throw std::invalid_argument("config: unsupported schema version");
  RunConfig c;

  const json& d = j.at("dataset");
  expect_keys(d, "dataset",
              {"source", "synth", "test_per_class", "train_images", "train_labels", "test_images",
               "test_labels", "train_files", "test_files"});
  c.source = d.at("source").get<std::string>();
  if (c.source == "synth") {
    const json& s = d.at("synth");
    expect_keys(s, "dataset.synth", {"classes", "per_class", "c", "h", "w", "sigma", "centers"});
    c.synth.classes = get_or(s, "classes", c.synth.classes);
    c.synth.per_class = get_or(s, "per_class", c.synth.per_class);
    c.synth.c = get_or(s, "c", c.synth.c);
    c.synth.h = get_or(s, "h", c.synth.h);
    c.synth.w = get_or(s, "w", c.synth.w);
    c.synth.sigma = get_or(s, "sigma", c.synth.sigma);
    if (s.contains("centers")) c.synth.centers = s.at("centers").get<std::vector<std::vector<float>>>();
    c.synth_test_per_class = get_or(d, "test_per_class", c.synth_test_per_class);
  } else if (c.source == "idx") {
    c.idx_train_images = d.at("train_images").get<std::string>();
    c.idx_train_labels = d.at("train_labels").get<std::string>();
    c.idx_test_images = d.at("test_images").get<std::string>();
    c.idx_test_labels = d.at("test_labels").get<std::string>();
  } else if (c.source == "cifar_bin") {
    for (const auto& p : d.at("train_files")) c.cifar_train_files.emplace_back(p.get<std::string>());
    for (const auto& p : d.at("test_files")) c.cifar_test_files.emplace_back(p.get<std::string>());
  } else {
    throw std::invalid_argument("config: unknown dataset source " + c.source);
  }

  c.victim = parse_net(j.at("victim"), "victim");
  c.f1 = parse_net(j.at("f1"), "f1");
  c.f2 = parse_net(j.at("f2"), "f2");
  c.f1_fraction = get_or(j, "f1_fraction", c.f1_fraction);

  const json& t = j.at("trigger");
  expect_keys(t, "trigger",
              {"kind", "budget", "mask_corner_h", "mask_corner_w", "pgd_steps", "pgd_step_size",
               "l0_count", "ua_epochs"});
  c.trigger_kind = trigger_kind_from_string(t.at("kind").get<std::string>());
  c.budget = get_or(t, "budget", c.budget);
  c.mask_corner_h = get_or(t, "mask_corner_h", c.mask_corner_h);
  c.mask_corner_w = get_or(t, "mask_corner_w", c.mask_corner_w);
  c.pgd_steps = get_or(t, "pgd_steps", c.pgd_steps);
  c.pgd_step_size = get_or(t, "pgd_step_size", c.pgd_step_size);
  c.l0_count = get_or(t, "l0_count", c.l0_count);
  c.ua_epochs = get_or(t, "ua_epochs", c.ua_epochs);

  const json& p = j.at("poison");
  expect_keys(p, "poison", {"target_label", "alpha"});
  c.target_label = get_or(p, "target_label", c.target_label);
  c.alpha = get_or(p, "alpha", c.alpha);

  // Desk defaults: the full-scale recipes shrunk proportionally.
  c.train_victim.epochs = 30;
  c.train_victim.lr_milestones = {10, 20};
  c.train_victim.lr_factor = 0.8f;
  c.train_f1.epochs = 20;
  c.train_f1.lr_milestones = {10, 15};
  c.train_f1.lr_factor = 0.5f;
  c.train_f1.adversarial = AdvTrainParams{5, 8.f / 255.f, 0.f};
  if (j.contains("train_f1")) c.train_f1 = parse_train(j.at("train_f1"), "train_f1", c.train_f1);
  if (j.contains("train_victim"))
    c.train_victim = parse_train(j.at("train_victim"), "train_victim", c.train_victim);

  if (j.contains("minmin")) {
    const json& m = j.at("minmin");
    expect_keys(m, "minmin",
                {"rounds", "model_epochs", "eps_steps", "eps_step_size", "batch", "lr", "momentum",
                 "weight_decay"});
    c.minmin.rounds = get_or(m, "rounds", c.minmin.rounds);
    c.minmin.model_epochs = get_or(m, "model_epochs", c.minmin.model_epochs);
    c.minmin.eps_steps = get_or(m, "eps_steps", c.minmin.eps_steps);
    c.minmin.eps_step_size = get_or(m, "eps_step_size", c.minmin.eps_step_size);
    c.minmin.batch = get_or(m, "batch", c.minmin.batch);
    c.minmin.lr = get_or(m, "lr", c.minmin.lr);
    c.minmin.momentum = get_or(m, "momentum", c.minmin.momentum);
    c.minmin.weight_decay = get_or(m, "weight_decay", c.minmin.weight_decay);
  }

  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    expect_keys(m, "metrics", {"enabled", "vsc_epochs", "vsc_lr", "vsc_batch", "vsc_mlp_width", "eta1"});
    c.metrics_enabled = get_or(m, "enabled", c.metrics_enabled);
    c.vsc.epochs = get_or(m, "vsc_epochs", c.vsc.epochs);
    c.vsc.lr = get_or(m, "vsc_lr", c.vsc.lr);
    c.vsc.batch = get_or(m, "vsc_batch", c.vsc.batch);
    c.vsc.mlp_width = get_or(m, "vsc_mlp_width", c.vsc.mlp_width);
    c.eta1 = get_or(m, "eta1", c.eta1);
  }

  if (j.contains("bounds")) {
    const json& b = j.at("bounds");
    expect_keys(b, "bounds",
                {"delta", "c_scale", "a_norm", "rad_num_sigma", "rad_candidates", "rad_samples"});
    c.bound_delta = get_or(b, "delta", c.bound_delta);
    c.bound_c_scale = get_or(b, "c_scale", c.bound_c_scale);
    c.bound_a_norm = get_or(b, "a_norm", c.bound_a_norm);
    c.rad_num_sigma = get_or(b, "rad_num_sigma", c.rad_num_sigma);
    c.rad_candidates = get_or(b, "rad_candidates", c.rad_candidates);
    c.rad_samples = get_or(b, "rad_samples", c.rad_samples);
  }

  const json& s = j.at("seeds");
  expect_keys(s, "seeds", {"data", "model", "trigger", "train"});
  c.seed_data = s.at("data").get<std::uint64_t>();
  c.seed_model = s.at("model").get<std::uint64_t>();
  c.seed_trigger = s.at("trigger").get<std::uint64_t>();
  c.seed_train = s.at("train").get<std::uint64_t>();

  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json d{{"source", source}};
  if (source == "synth") {
    d["synth"] = {{"classes", synth.classes}, {"per_class", synth.per_class}, {"c", synth.c},
                  {"h", synth.h},             {"w", synth.w},                 {"sigma", synth.sigma}};
    if (!synth.centers.empty()) d["synth"]["centers"] = synth.centers;
    d["test_per_class"] = synth_test_per_class;
  } else if (source == "idx") {
    d["train_images"] = idx_train_images.string();
    d["train_labels"] = idx_train_labels.string();
    d["test_images"] = idx_test_images.string();
    d["test_labels"] = idx_test_labels.string();
  } else {
    json tf = json::array(), sf = json::array();
    for (const auto& f : cifar_train_files) tf.push_back(f.string());
    for (const auto& f : cifar_test_files) sf.push_back(f.string());
    d["train_files"] = tf;
    d["test_files"] = sf;
  }
  return json{
      {"version", 1},
      {"dataset", d},
      {"victim", net_to_json(victim)},
      {"f1", net_to_json(f1)},
      {"f2", net_to_json(f2)},
      {"f1_fraction", f1_fraction},
      {"trigger",
       {{"kind", to_string(trigger_kind)},
        {"budget", budget},
        {"mask_corner_h", mask_corner_h},
        {"mask_corner_w", mask_corner_w},
        {"pgd_steps", pgd_steps},
        {"pgd_step_size", pgd_step_size},
        {"l0_count", l0_count},
        {"ua_epochs", ua_epochs}}},
      {"poison", {{"target_label", target_label}, {"alpha", alpha}}},
      {"train_f1", train_to_json(train_f1)},
      {"train_victim", train_to_json(train_victim)},
      {"minmin",
       {{"rounds", minmin.rounds},
        {"model_epochs", minmin.model_epochs},
        {"eps_steps", minmin.eps_steps},
        {"eps_step_size", minmin.eps_step_size},
        {"batch", minmin.batch},
        {"lr", minmin.lr},
        {"momentum", minmin.momentum},
        {"weight_decay", minmin.weight_decay}}},
      {"metrics",
       {{"enabled", metrics_enabled},
        {"vsc_epochs", vsc.epochs},
        {"vsc_lr", vsc.lr},
        {"vsc_batch", vsc.batch},
        {"vsc_mlp_width", vsc.mlp_width},
        {"eta1", eta1}}},
      {"bounds",
       {{"delta", bound_delta},
        {"c_scale", bound_c_scale},
        {"a_norm", bound_a_norm},
        {"rad_num_sigma", rad_num_sigma},
        {"rad_candidates", rad_candidates},
        {"rad_samples", rad_samples}}},
      {"seeds",
       {{"data", seed_data}, {"model", seed_model}, {"trigger", seed_trigger}, {"train", seed_train}}}};
}

void RunConfig::apply_seed_override(const std::string& key, std::uint64_t value) {
  if (key == "data") seed_data = value;
  else if (key == "model") seed_model = value;
  else if (key == "trigger") seed_trigger = value;
  else if (key == "train") seed_train = value;
  else throw std::invalid_argument("seed override: unknown key " + key);
}

void RunConfig::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("config: alpha must be in [0,1]");
  if (!(budget > 0.f)) throw std::invalid_argument("config: trigger budget must be > 0");
  if (!(f1_fraction > 0.0 && f1_fraction <= 1.0))
    throw std::invalid_argument("config: f1_fraction must be in (0,1]");
  if (source == "idx") {
    for (const auto& p : {idx_train_images, idx_train_labels, idx_test_images, idx_test_labels})
      if (!fs::exists(p)) throw std::invalid_argument("config: missing file " + p.string());
  }
  if (source == "cifar_bin") {
    for (const auto& p : cifar_train_files)
      if (!fs::exists(p)) throw std::invalid_argument("config: missing file " + p.string());
    for (const auto& p : cifar_test_files)
      if (!fs::exists(p)) throw std::invalid_argument("config: missing file " + p.string());
  }
  train_f1.validate();
  train_victim.validate();
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kData: return "data";
    case Stage::kF1: return "f1";
    case Stage::kT1: return "t1";
    case Stage::kF2: return "f2";
    case Stage::kTriggers: return "triggers";
    case Stage::kPoison: return "poison";
    case Stage::kVictim: return "victim";
    case Stage::kMetrics: return "metrics";
    case Stage::kBounds: return "bounds";
    case Stage::kReport: return "report";
  }
  return "?";
}

namespace {

std::string dataset_sha(const Dataset& ds) {
  std::string bytes(reinterpret_cast<const char*>(ds.images.data.data()),
                    ds.images.data.size() * sizeof(float));
  for (int y : ds.labels) bytes.append(reinterpret_cast<const char*>(&y), sizeof(int));
  return sha256_hex(bytes);
}

struct PipelineState {
  RunConfig cfg;
  fs::path dir;
  json manifest;
  bool need_f1 = false, need_f2 = false;

  Dataset train, test;
  std::vector<int> t_indices;
  std::optional<Graph> f1, f2;
  Dataset t1;
  TriggerSet trig_train, trig_eval;
  PoisonedDataset poisoned;
  std::optional<Graph> victim_poisoned, victim_clean;
  TrainHistory hist_victim;
  std::vector<double> curve_epoch, curve_clean, curve_asr;
  ConditionReport cond;
  json bounds_json;
  json report;
};

void save_manifest(PipelineState& st) {
  std::ofstream os(st.dir / "manifest.json");
  os << st.manifest.dump(2) << "\n";
  if (!os) throw std::runtime_error("manifest: write failed");
}

void record_file(PipelineState& st, const std::string& rel) {
  st.manifest["files"][rel] = sha256_file(st.dir / rel);
}

bool files_valid(const PipelineState& st, const std::vector<std::string>& rels) {
  for (const auto& rel : rels) {
    if (!st.manifest["files"].contains(rel)) return false;
    const fs::path p = st.dir / rel;
    if (!fs::exists(p)) return false;
    if (sha256_file(p) != st.manifest["files"][rel].get<std::string>()) return false;
  }
  return true;
}

bool stage_done(const PipelineState& st, Stage s) {
  for (const auto& name : st.manifest["stages_done"])
    if (name.get<std::string>() == stage_name(s)) return true;
  return false;
}

void mark_done(PipelineState& st, Stage s) {
  if (!stage_done(st, s)) st.manifest["stages_done"].push_back(stage_name(s));
  save_manifest(st);
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + p.string());
}

NetworkSpec with_input(NetworkSpec spec, const Dataset& ds, int classes) {
  auto shape = ds.sample_shape();
  spec.in_c = shape[0];
  spec.in_h = shape[1];
  spec.in_w = shape[2];
  spec.classes = classes;
  return spec;
}

// ---- stages ----

void stage_data(PipelineState& st) {
  const RunConfig& c = st.cfg;
  if (c.source == "synth") {
    SynthSpec spec = c.synth;
    if (spec.centers.empty()) {
      // Shared centers for train and test, drawn once from the data seed.
      Rng crng = Rng(c.seed_data).split(0x63);
      const std::int64_t dim = static_cast<std::int64_t>(spec.c) * spec.h * spec.w;
      spec.centers.resize(static_cast<std::size_t>(spec.classes));
      for (auto& ctr : spec.centers) {
        ctr.resize(static_cast<std::size_t>(dim));
        for (auto& v : ctr) v = crng.uniform(0.2f, 0.8f);
      }
    }
    st.train = synth_clusters(spec, Rng(c.seed_data).split(1).seed());
    SynthSpec test_spec = spec;
    test_spec.per_class = c.synth_test_per_class;
    st.test = synth_clusters(test_spec, Rng(c.seed_data).split(2).seed());
    st.train.name = "synth-train";
    st.test.name = "synth-test";
  } else if (c.source == "idx") {
    st.train = load_idx(c.idx_train_images, c.idx_train_labels);
    st.test = load_idx(c.idx_test_images, c.idx_test_labels);
  } else {
    st.train = load_cifar_binary(c.cifar_train_files);
    st.test = load_cifar_binary(c.cifar_test_files);
  }
  if (st.train.classes != c.victim.classes)
    throw std::invalid_argument("config: victim classes differ from dataset classes");
  if (c.target_label < 0 || c.target_label >= st.train.classes)
    throw std::invalid_argument("config: target label out of range");

  // The trigger author's share of the training set.
  std::vector<int> order(static_cast<std::size_t>(st.train.size()));
  for (int i = 0; i < st.train.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng(c.seed_data).split(0x54);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.next_below(i))]);
  order.resize(std::max<std::size_t>(1, static_cast<std::size_t>(c.f1_fraction * st.train.size())));
  std::sort(order.begin(), order.end());
  st.t_indices = std::move(order);

  json summary{{"train_n", st.train.size()},
               {"test_n", st.test.size()},
               {"classes", st.train.classes},
               {"sample_shape", st.train.sample_shape()},
               {"train_sha256", dataset_sha(st.train)},
               {"test_sha256", dataset_sha(st.test)},
               {"author_subset_n", st.t_indices.size()}};
  const std::string rel = "stage_data/summary.json";
  if (stage_done(st, Stage::kData) && files_valid(st, {rel})) {
    std::ifstream is(st.dir / rel);
    json prev = json::parse(is);
    if (prev.at("train_sha256") != summary.at("train_sha256") ||
        prev.at("test_sha256") != summary.at("test_sha256"))
      throw std::runtime_error("data stage: regenerated dataset differs from the recorded one");
    return;
  }
  write_text(st.dir / rel, summary.dump(2) + "\n");
  record_file(st, rel);
  mark_done(st, Stage::kData);
}

Dataset subset(const Dataset& ds, const std::vector<int>& idx) {
  auto shape = ds.sample_shape();
  Dataset out;
  out.images = Tensor::zeros({static_cast<int>(idx.size()), shape[0], shape[1], shape[2]});
  out.labels.resize(idx.size());
  out.classes = ds.classes;
  out.name = ds.name + "-subset";
  const std::int64_t per = ds.sample_numel();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(ds.images.data.begin() + static_cast<std::int64_t>(idx[i]) * per, per,
                out.images.data.begin() + static_cast<std::int64_t>(i) * per);
    out.labels[i] = ds.labels[static_cast<std::size_t>(idx[i])];
  }
  return out;
}

void stage_f1(PipelineState& st) {
  if (!st.need_f1) {
    mark_done(st, Stage::kF1);
    return;
  }
  NetworkSpec spec = with_input(st.cfg.f1, st.train, st.train.classes);
  st.f1 = build_network(spec, Rng(st.cfg.seed_model).split(1).seed());
  const std::vector<std::string> rels{"stage_f1/f1.plabt", "stage_f1/f1_history.csv"};
  if (stage_done(st, Stage::kF1) && files_valid(st, rels)) {
    st.f1->load_params(st.dir / rels[0]);
    return;
  }
  TrainConfig tc = st.cfg.train_f1;
  tc.seed = Rng(st.cfg.seed_train).split(1).seed();
  Dataset author_view = subset(st.train, st.t_indices);
  TrainHistory hist = train(*st.f1, author_view, tc);
  fs::create_directories(st.dir / "stage_f1");
  st.f1->save_params(st.dir / rels[0]);
  hist.write_csv(st.dir / rels[1]);
  record_file(st, rels[0]);
  record_file(st, rels[1]);
  mark_done(st, Stage::kF1);
}

Mask pipeline_mask(const PipelineState& st) {
  auto shape = st.train.sample_shape();
  if (st.cfg.trigger_kind == TriggerKind::kScut) return build_mask(shape, shape[1], shape[2]);
  return build_mask(shape, st.cfg.mask_corner_h, st.cfg.mask_corner_w);
}

PgdParams pipeline_pgd(const PipelineState& st) {
  PgdParams p;
  p.budget = st.cfg.budget;
  p.steps = st.cfg.pgd_steps;
  p.step_size = st.cfg.pgd_step_size;
  return p;
}

void stage_t1(PipelineState& st) {
  if (!st.need_f2) {
    mark_done(st, Stage::kT1);
    return;
  }
  Dataset author_view = subset(st.train, st.t_indices);
  const std::string rel = "stage_t1/t1.plabt";
  if (stage_done(st, Stage::kT1) && files_valid(st, {rel})) {
    auto tensors = load_tensors(st.dir / rel);
    st.t1.images = std::move(tensors.at(0));
    const int n2 = st.t1.images.shape[0];
    st.t1.labels.resize(static_cast<std::size_t>(n2));
    for (int i = 0; i < n2; ++i) st.t1.labels[static_cast<std::size_t>(i)] = i % 2;
    st.t1.classes = 2;
    st.t1.name = "t1";
    return;
  }
  if (st.need_f1) {
    st.t1 = build_t1(*st.f1, author_view, pipeline_mask(st), pipeline_pgd(st));
  } else {
    // Full-support shortcut: the adversarial half is degenerate, pairs share x.
    auto shape = author_view.sample_shape();
    const int n = author_view.size();
    st.t1.images = Tensor::zeros({2 * n, shape[0], shape[1], shape[2]});
    st.t1.labels.resize(static_cast<std::size_t>(2 * n));
    const std::int64_t per = author_view.sample_numel();
    for (int i = 0; i < n; ++i) {
      const float* src = author_view.images.data.data() + static_cast<std::int64_t>(i) * per;
      std::copy_n(src, per, st.t1.images.data.begin() + static_cast<std::int64_t>(2 * i) * per);
      std::copy_n(src, per, st.t1.images.data.begin() + (static_cast<std::int64_t>(2 * i) + 1) * per);
      st.t1.labels[static_cast<std::size_t>(2 * i)] = 0;
      st.t1.labels[static_cast<std::size_t>(2 * i) + 1] = 1;
    }
    st.t1.classes = 2;
    st.t1.name = "t1";
  }
  fs::create_directories(st.dir / "stage_t1");
  save_tensors(st.dir / rel, std::span<const Tensor>(&st.t1.images, 1));
  record_file(st, rel);
  mark_done(st, Stage::kT1);
}

Graph build_f2_for(const PipelineState& st) {
  auto shape = st.train.sample_shape();
  const std::uint64_t seed = Rng(st.cfg.seed_model).split(2).seed();
  if (st.cfg.f2.kind == NetKind::kF2Binary) return build_f2_binary(shape[0], shape[1], shape[2], seed);
  NetworkSpec spec = with_input(st.cfg.f2, st.train, 2);
  return build_network(spec, seed);
}

void stage_f2(PipelineState& st) {
  if (!st.need_f2) {
    mark_done(st, Stage::kF2);
    return;
  }
  st.f2 = build_f2_for(st);
  const std::string rel = "stage_f2/f2.plabt";
  if (stage_done(st, Stage::kF2) && files_valid(st, {rel})) {
    st.f2->load_params(st.dir / rel);
    return;
  }
  train_minmin_shortcut(*st.f2, st.t1, st.cfg.budget, pipeline_mask(st), st.cfg.minmin,
                        Rng(st.cfg.seed_train).split(2).seed());
  fs::create_directories(st.dir / "stage_f2");
  st.f2->save_params(st.dir / rel);
  record_file(st, rel);
  mark_done(st, Stage::kF2);
}

TriggerSet make_triggers(const PipelineState& st, const Dataset& data, const std::vector<int>& idx,
                         const TriggerSet* train_side) {
  const RunConfig& c = st.cfg;
  switch (c.trigger_kind) {
    case TriggerKind::kOurs:
      return forge_triggers(*st.f1, *st.f2, pipeline_mask(st), c.budget, pipeline_pgd(st),
                            pipeline_pgd(st), data, idx);
    case TriggerKind::kRnLinf:
    case TriggerKind::kUa: {
      if (!train_side) {
        BaselineParams bp;
        bp.budget = c.budget;
        bp.pgd = pipeline_pgd(st);
        bp.ua_epochs = c.ua_epochs;
        bp.f1 = st.f1 ? &*st.f1 : nullptr;
        return baseline_trigger(c.trigger_kind, bp, data, idx, c.seed_trigger);
      }
      // The shared vector must stay identical across train and eval sets.
      TriggerSet ts;
      ts.kind = train_side->kind;
      ts.budget = train_side->budget;
      ts.indices = idx;
      std::sort(ts.indices.begin(), ts.indices.end());
      ts.deltas.assign(ts.indices.size(), train_side->deltas.at(0));
      return ts;
    }
    case TriggerKind::kRnL0: {
      if (!train_side) {
        BaselineParams bp;
        bp.budget = c.budget;
        bp.l0_count = c.l0_count;
        return baseline_trigger(c.trigger_kind, bp, data, idx, c.seed_trigger);
      }
      TriggerSet ts;
      ts.kind = TriggerKind::kRnL0;
      ts.budget = 1.f;
      ts.l0_count = train_side->l0_count;
      ts.l0_positions = train_side->l0_positions;
      ts.indices = idx;
      std::sort(ts.indices.begin(), ts.indices.end());
      for (int i : ts.indices) {
        Tensor x = data.sample(i);
        Tensor d = Tensor::zeros(data.sample_shape());
        for (std::int64_t pos : ts.l0_positions)
          d.data[static_cast<std::size_t>(pos)] = -x.data[static_cast<std::size_t>(pos)];
        ts.deltas.push_back(std::move(d));
      }
      return ts;
    }
    case TriggerKind::kAdv: {
      BaselineParams bp;
      bp.budget = c.budget;
      bp.pgd = pipeline_pgd(st);
      bp.f1 = st.f1 ? &*st.f1 : nullptr;
      return baseline_trigger(c.trigger_kind, bp, data, idx, c.seed_trigger);
    }
    case TriggerKind::kScut: {
      BaselineParams bp;
      bp.budget = c.budget;
      bp.pgd = pipeline_pgd(st);
      bp.f2 = st.f2 ? &*st.f2 : nullptr;
      return baseline_trigger(c.trigger_kind, bp, data, idx, c.seed_trigger);
    }
  }
  throw std::logic_error("make_triggers: bad kind");
}

void stage_triggers(PipelineState& st) {
  const std::vector<std::string> rels{"stage_triggers/triggers_train.plabt",
                                      "stage_triggers/triggers_train.plabt.json",
                                      "stage_triggers/triggers_eval.plabt",
                                      "stage_triggers/triggers_eval.plabt.json"};
  if (stage_done(st, Stage::kTriggers) && files_valid(st, rels)) {
    st.trig_train = load_triggers(st.dir / rels[0]);
    st.trig_eval = load_triggers(st.dir / rels[2]);
    return;
  }
  std::vector<int> train_idx = st.train.indices_with_label(st.cfg.target_label);
  std::vector<int> eval_idx(static_cast<std::size_t>(st.test.size()));
  for (int i = 0; i < st.test.size(); ++i) eval_idx[static_cast<std::size_t>(i)] = i;
  st.trig_train = make_triggers(st, st.train, train_idx, nullptr);
  st.trig_eval = make_triggers(st, st.test, eval_idx, &st.trig_train);
  for (TriggerSet* ts : {&st.trig_train, &st.trig_eval}) {
    ts->seed = st.cfg.seed_trigger;
    if (st.need_f1 && st.manifest["files"].contains("stage_f1/f1.plabt"))
      ts->f1_fingerprint = st.manifest["files"]["stage_f1/f1.plabt"].get<std::string>();
    if (st.need_f2 && st.manifest["files"].contains("stage_f2/f2.plabt"))
      ts->f2_fingerprint = st.manifest["files"]["stage_f2/f2.plabt"].get<std::string>();
  }
  st.trig_train.check_all_budgets();
  st.trig_eval.check_all_budgets();
  fs::create_directories(st.dir / "stage_triggers");
  save_triggers(st.dir / rels[0], st.trig_train);
  save_triggers(st.dir / rels[2], st.trig_eval);
  for (const auto& r : rels) record_file(st, r);
  mark_done(st, Stage::kTriggers);
}

void stage_poison(PipelineState& st) {
  st.poisoned = build_poisoned_set(st.train, st.trig_train, st.cfg.target_label, st.cfg.alpha,
                                   Rng(st.cfg.seed_data).split(0x70).seed());
  json plan{{"target_label", st.poisoned.plan.target_label},
            {"alpha", st.poisoned.plan.alpha},
            {"selected", st.poisoned.plan.selected},
            {"poisoned_sha256", dataset_sha(st.poisoned.data)}};
  const std::string rel = "stage_poison/plan.json";
  if (stage_done(st, Stage::kPoison) && files_valid(st, {rel})) {
    std::ifstream is(st.dir / rel);
    json prev = json::parse(is);
    if (prev.at("poisoned_sha256") != plan.at("poisoned_sha256"))
      throw std::runtime_error("poison stage: regenerated poisoned set differs from the recorded one");
    return;
  }
  write_text(st.dir / rel, plan.dump(2) + "\n");
  record_file(st, rel);
  mark_done(st, Stage::kPoison);
}

void stage_victim(PipelineState& st) {
  NetworkSpec spec = with_input(st.cfg.victim, st.train, st.train.classes);
  const std::uint64_t model_seed = Rng(st.cfg.seed_model).split(3).seed();
  st.victim_poisoned = build_network(spec, model_seed);
  st.victim_clean = build_network(spec, model_seed);
  const int snapshot_count = std::min(st.cfg.rad_candidates, st.cfg.train_victim.epochs);
  std::vector<std::string> rels{"stage_victim/victim_poisoned.plabt",
                                "stage_victim/victim_clean.plabt",
                                "stage_victim/victim_history.csv", "stage_victim/curves.json"};
  for (int i = 0; i < snapshot_count; ++i)
    rels.push_back("stage_victim/snapshot_" + std::to_string(i) + ".plabt");
  if (stage_done(st, Stage::kVictim) && files_valid(st, rels)) {
    st.victim_poisoned->load_params(st.dir / rels[0]);
    st.victim_clean->load_params(st.dir / rels[1]);
    std::ifstream is(st.dir / rels[3]);
    json curves = json::parse(is);
    st.curve_epoch = curves.at("epoch").get<std::vector<double>>();
    st.curve_clean = curves.at("clean_acc").get<std::vector<double>>();
    st.curve_asr = curves.at("asr").get<std::vector<double>>();
    st.hist_victim.snapshots.clear();
    for (int i = 0; i < snapshot_count; ++i)
      st.hist_victim.snapshots.push_back(load_tensors(st.dir / rels[static_cast<std::size_t>(4 + i)]));
    return;
  }
  TrainConfig tc = st.cfg.train_victim;
  tc.seed = Rng(st.cfg.seed_train).split(3).seed();
  tc.snapshot_limit = st.cfg.rad_candidates;

  st.curve_epoch.clear();
  st.curve_clean.clear();
  st.curve_asr.clear();
  auto observer = [&](int epoch, const Graph& net) {
    if (!st.cfg.metrics_enabled) return;
    st.curve_epoch.push_back(epoch);
    st.curve_clean.push_back(eval_accuracy(net, st.test));
    st.curve_asr.push_back(eval_asr(net, st.test, st.trig_eval, st.cfg.target_label));
  };
  st.hist_victim = train(*st.victim_poisoned, st.poisoned.data, tc, observer);

  TrainConfig cc = tc;
  cc.snapshot_limit = 0;
  train(*st.victim_clean, st.train, cc);

  fs::create_directories(st.dir / "stage_victim");
  st.victim_poisoned->save_params(st.dir / rels[0]);
  st.victim_clean->save_params(st.dir / rels[1]);
  st.hist_victim.write_csv(st.dir / rels[2]);
  json curves{{"epoch", st.curve_epoch}, {"clean_acc", st.curve_clean}, {"asr", st.curve_asr}};
  write_text(st.dir / rels[3], curves.dump(2) + "\n");
  if (static_cast<int>(st.hist_victim.snapshots.size()) != snapshot_count)
    throw std::runtime_error("victim stage: unexpected snapshot count");
  for (int i = 0; i < snapshot_count; ++i)
    save_tensors(st.dir / rels[static_cast<std::size_t>(4 + i)], st.hist_victim.snapshots[static_cast<std::size_t>(i)]);
  for (const auto& r : rels) record_file(st, r);
  mark_done(st, Stage::kVictim);
}

void stage_metrics(PipelineState& st) {
  if (!st.cfg.metrics_enabled) {
    mark_done(st, Stage::kMetrics);
    return;
  }
  const Graph& f = *st.victim_poisoned;
  const Graph& g = *st.victim_clean;
  st.cond.clean_acc = eval_accuracy(f, st.test);
  st.cond.target_acc = eval_class_accuracy(f, st.test, st.cfg.target_label);
  st.cond.asr = eval_asr(f, st.test, st.trig_eval, st.cfg.target_label);
  st.cond.epsilon_c1 = measure_c1_epsilon(g, st.test, st.trig_eval, st.cfg.target_label);
  auto sim = measure_similarity_k(st.trig_eval);
  st.cond.similarity_k = sim.k;
  st.cond.similarity_k_shortcut = sim.k_shortcut;
  st.cond.tau_c3 = measure_c3_tau(f, g, st.test, st.trig_eval, st.cfg.target_label, 0.f);
  st.cond.tau_c3_shifted = measure_c3_tau(f, g, st.test, st.trig_eval, st.cfg.target_label, 0.5f);
  st.cond.v_adv = v_adv(g, st.test, st.trig_eval);
  st.cond.v_sc = v_sc(st.test, st.trig_eval, st.cfg.vsc, Rng(st.cfg.seed_train).split(7).seed());

  const std::vector<std::string> rels{"stage_metrics/condition_report.json",
                                      "stage_metrics/condition_report.csv"};
  write_text(st.dir / rels[0], st.cond.to_json().dump(2) + "\n");
  write_text(st.dir / rels[1], ConditionReport::csv_header() + "\n" + st.cond.csv_row() + "\n");
  for (const auto& r : rels) record_file(st, r);
  mark_done(st, Stage::kMetrics);
}

// Hypothesis-value matrices for the capacity estimates, built from training
// snapshots plus the final nets. The finite candidate class makes the result
// a lower estimate, flagged as such in the report.
json rademacher_block(PipelineState& st) {
  NetworkSpec spec = with_input(st.cfg.victim, st.train, st.train.classes);
  Graph probe = build_network(spec, 0);
  std::vector<std::vector<Tensor>> candidates = st.hist_victim.snapshots;
  candidates.push_back(st.victim_poisoned->params());
  candidates.push_back(st.victim_clean->params());

  auto pick = [&](const std::vector<int>& pool, std::uint64_t tag) {
    std::vector<int> idx = pool;
    Rng rng = Rng(st.cfg.seed_data).split(tag);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.next_below(i))]);
    if (static_cast<int>(idx.size()) > st.cfg.rad_samples) idx.resize(static_cast<std::size_t>(st.cfg.rad_samples));
    std::sort(idx.begin(), idx.end());
    return idx;
  };

  auto value_matrix = [&](const std::vector<int>& idx, bool error_class) {
    std::vector<std::vector<double>> values;
    Dataset view = subset(st.train, idx);
    for (const auto& params : candidates) {
      probe.params() = params;
      const Tensor probs = forward_probs(probe, view.images);
      const int m = probs.shape.back();
      std::vector<double> row(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const float* pr = probs.data.data() + static_cast<std::int64_t>(i) * m;
        const int y = view.labels[i];
        row[i] = error_class ? (argmax_row(pr, m) != y ? 1.0 : 0.0)
                             : static_cast<double>(pr[y]);
      }
      values.push_back(std::move(row));
    }
    return values;
  };

  std::vector<int> neq, eq;
  for (int i = 0; i < st.train.size(); ++i)
    (st.train.labels[static_cast<std::size_t>(i)] == st.cfg.target_label ? eq : neq).push_back(i);
  json out;
  auto emit = [&](const char* name, const std::vector<int>& pool, bool error_class, std::uint64_t tag) {
    if (pool.empty()) {
      out[name] = nullptr;
      return 0.0;
    }
    auto idx = pick(pool, tag);
    auto est = empirical_rademacher(value_matrix(idx, error_class), st.cfg.rad_num_sigma,
                                    Rng(st.cfg.seed_data).split(tag + 1).seed());
    out[name] = {{"value", est.value},
                 {"stderr", est.stderr_},
                 {"exact_enumeration", est.exact},
                 {"samples", idx.size()},
                 {"candidates", candidates.size()},
                 {"lower_estimate", true}};
    return est.value;
  };
  const double rad_neq = emit("rad_error_not_target", neq, true, 0x100);
  const double rad_eq = emit("rad_error_target", eq, true, 0x200);
  const double rad_h1 = emit("rad_prob_target", eq, false, 0x300);
  out["rad_neq"] = rad_neq;
  out["rad_eq"] = rad_eq;
  out["rad_h1"] = rad_h1;
  return out;
}

void stage_bounds(PipelineState& st) {
  json rad = rademacher_block(st);
  BoundInputs in;
  in.n = st.train.size();
  in.alpha = st.cfg.alpha;
  double eta = 0.0;
  for (int y : st.train.labels) eta += (y == st.cfg.target_label);
  in.eta_frac = eta / st.train.size();
  in.delta = st.cfg.bound_delta;
  in.c_scale = st.cfg.bound_c_scale;
  in.emp_error = 1.0 - eval_accuracy(*st.victim_poisoned, st.poisoned.data);
  in.emp_risk = mean_cross_entropy(*st.victim_poisoned, st.poisoned.data.images, st.poisoned.data.labels);
  in.rad_neq = rad.at("rad_neq").get<double>();
  in.rad_eq = rad.at("rad_eq").get<double>();

  json b;
  b["inputs"] = {{"n", in.n},           {"alpha", in.alpha},       {"eta_frac", in.eta_frac},
                 {"delta", in.delta},   {"emp_error", in.emp_error}, {"emp_risk", in.emp_risk},
                 {"c_scale", in.c_scale}};
  b["rademacher"] = rad;
  try {
    b["clean_bound"] = clean_bound_rhs(in).to_json();
  } catch (const std::exception& e) {
    b["clean_bound"] = std::string("rejected: ") + e.what();
  }
  const double rad_h1 = rad.at("rad_h1").get<double>();
  for (auto [name, form] : {std::pair{"poison_bound_value_form", PoisonBoundForm::kValue},
                            std::pair{"poison_bound_error_form", PoisonBoundForm::kError}}) {
    try {
      b[name] = poison_bound_rhs(in, rad_h1, form).to_json();
    } catch (const std::exception& e) {
      b[name] = std::string("rejected: ") + e.what();
    }
  }
  b["vc_rad_bound"] = vc_rad_bound(st.cfg.victim.width, st.cfg.victim.depth, st.train.classes,
                                   st.train.size(), st.cfg.bound_c_scale);
  b["covering_rad_bound"] =
      covering_rad_bound(st.cfg.victim.width, st.cfg.victim.depth, st.cfg.bound_a_norm,
                         st.train.classes, static_cast<int>(st.train.sample_numel()), st.train.size(),
                         st.cfg.bound_c_scale);
  json scaling = json::array();
  for (std::int64_t n : {1000, 10000, 100000, 1000000}) {
    auto gp = gap_probability_exact(n, 1.0, 1.0);
    scaling.push_back({{"n", n}, {"probability", gp.probability},
                       {"scaled", gp.probability * std::sqrt(static_cast<double>(n))}});
  }
  b["gap_scaling"] = scaling;
  st.bounds_json = b;

  const std::string rel = "stage_bounds/bounds.json";
  write_text(st.dir / rel, b.dump(2) + "\n");
  record_file(st, rel);
  mark_done(st, Stage::kBounds);
}

json reference_recipe() {
  // Full-scale recipe the desk defaults shrink from.
  return json{{"victim", {{"epochs", 150}, {"lr", 0.01}, {"lr_milestones", {40, 80, 120}},
                          {"lr_factor", 0.8}, {"weight_decay", 1e-4}, {"momentum", 0.9},
                          {"augment", true}}},
              {"f1", {{"epochs", 200}, {"lr", 0.01}, {"lr_milestones", {100, 150}},
                      {"lr_factor", 0.5}, {"adversarial_steps", 10}, {"adversarial_budget", 8.0 / 255.0}}},
              {"f2", {{"epochs", 40}, {"lr", 0.01}}}};
}

void stage_report(PipelineState& st) {
  json r;
  r["config"] = st.cfg.to_json();
  r["recipe_reference"] = reference_recipe();
  r["recipe_desk"] = {{"victim", train_to_json(st.cfg.train_victim)},
                      {"f1", train_to_json(st.cfg.train_f1)}};
  r["dataset"] = {{"train_n", st.train.size()},
                  {"test_n", st.test.size()},
                  {"classes", st.train.classes},
                  {"train_sha256", dataset_sha(st.train)},
                  {"test_sha256", dataset_sha(st.test)}};
  r["poison"] = {{"alpha", st.cfg.alpha},
                 {"target_label_reported", st.cfg.target_label + 1},  // labels print 1-based
                 {"selected_count", st.poisoned.plan.selected.size()}};
  r["trigger_stats"] = {{"kind", to_string(st.cfg.trigger_kind)},
                        {"budget", st.cfg.budget},
                        {"max_linf_train", st.trig_train.max_linf()},
                        {"max_linf_eval", st.trig_eval.max_linf()}};
  if (st.cfg.metrics_enabled) {
    r["condition_report"] = st.cond.to_json();
    r["curves"] = {{"epoch", st.curve_epoch}, {"clean_acc", st.curve_clean}, {"asr", st.curve_asr}};
  }
  r["accuracies"] = {{"clean_net_test_acc", eval_accuracy(*st.victim_clean, st.test)},
                     {"poisoned_net_test_acc", eval_accuracy(*st.victim_poisoned, st.test)},
                     {"poisoned_net_train_acc", eval_accuracy(*st.victim_poisoned, st.poisoned.data)}};
  r["bounds"] = st.bounds_json;
  st.report = r;
  write_text(st.dir / "report.json", r.dump(2) + "\n");
  record_file(st, "report.json");

  fs::create_directories(st.dir / "charts");
  if (st.cfg.metrics_enabled && !st.curve_epoch.empty()) {
    write_line_chart(st.dir / "charts" / "accuracy_asr_vs_epoch.svg", "victim training", "epoch",
                     "rate",
                     {{"clean_acc", st.curve_epoch, st.curve_clean},
                      {"asr", st.curve_epoch, st.curve_asr}});
    record_file(st, "charts/accuracy_asr_vs_epoch.svg");
  }
  if (!st.hist_victim.epochs.empty()) {
    std::vector<double> ep, loss;
    for (const auto& e : st.hist_victim.epochs) {
      ep.push_back(e.epoch);
      loss.push_back(e.loss);
    }
    write_line_chart(st.dir / "charts" / "victim_loss.svg", "victim training loss", "epoch", "loss",
                     {{"train_loss", ep, loss}});
    record_file(st, "charts/victim_loss.svg");
  }
  mark_done(st, Stage::kReport);
}

void init_manifest(PipelineState& st) {
  fs::create_directories(st.dir);
  const std::string cfg_text = st.cfg.to_json().dump(2) + "\n";
  const std::string cfg_sha = sha256_hex(cfg_text);
  const fs::path manifest_path = st.dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream is(manifest_path);
    st.manifest = json::parse(is);
    if (st.manifest.at("config_sha256").get<std::string>() != cfg_sha) {
      // Different run configuration: start the manifest over.
      st.manifest = json{{"config_sha256", cfg_sha}, {"files", json::object()},
                         {"stages_done", json::array()}};
    }
  } else {
    st.manifest = json{{"config_sha256", cfg_sha}, {"files", json::object()},
                       {"stages_done", json::array()}};
  }
  write_text(st.dir / "config.json", cfg_text);
  st.manifest["files"]["config.json"] = cfg_sha;
  save_manifest(st);
}

}  // namespace

json run_pipeline(const RunConfig& cfg, const fs::path& out_dir, Stage upto) {
  cfg.validate();
  PipelineState st;
  st.cfg = cfg;
  st.dir = out_dir;
  st.need_f1 = cfg.trigger_kind == TriggerKind::kOurs || cfg.trigger_kind == TriggerKind::kAdv ||
               cfg.trigger_kind == TriggerKind::kUa;
  st.need_f2 = cfg.trigger_kind == TriggerKind::kOurs || cfg.trigger_kind == TriggerKind::kScut;
  init_manifest(st);

  const std::vector<std::pair<Stage, void (*)(PipelineState&)>> stages = {
      {Stage::kData, stage_data},         {Stage::kF1, stage_f1},
      {Stage::kT1, stage_t1},             {Stage::kF2, stage_f2},
      {Stage::kTriggers, stage_triggers}, {Stage::kPoison, stage_poison},
      {Stage::kVictim, stage_victim},     {Stage::kMetrics, stage_metrics},
      {Stage::kBounds, stage_bounds},     {Stage::kReport, stage_report}};
  for (const auto& [s, fn] : stages) {
    if (static_cast<int>(s) > static_cast<int>(upto)) break;
    try {
      fn(st);
    } catch (const std::exception& e) {
      save_manifest(st);
      throw std::runtime_error(std::string("stage ") + stage_name(s) + ": " + e.what());
    }
  }
  return st.report;
}

json run_sweep(const RunConfig& cfg, const fs::path& out_dir, const std::string& axis,
               const std::vector<std::string>& values) {
  if (axis != "alpha" && axis != "eta" && axis != "trigger_kind")
    throw std::invalid_argument("sweep: axis must be alpha, eta, or trigger_kind");
  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "value,clean_acc,target_acc,asr,epsilon_c1,similarity_k,tau_c3,v_adv,v_sc,max_linf_eval,"
         "clean_coefficient,clean_bound_total,poison_bound_error_total\n";
  json rows = json::array();
  std::vector<double> xs, ys_asr, ys_acc;
  for (const auto& value : values) {
    RunConfig sub = cfg;
    if (axis == "alpha") sub.alpha = std::stod(value);
    else if (axis == "eta") sub.budget = std::stof(value);
    else sub.trigger_kind = trigger_kind_from_string(value);
    std::string tag = value;
    std::replace(tag.begin(), tag.end(), '.', '_');
    const fs::path sub_dir = out_dir / (axis + "_" + tag);
    json rep = run_pipeline(sub, sub_dir);
    if (!rep.contains("condition_report"))
      throw std::invalid_argument("sweep: metrics must be enabled to aggregate rows");
    const json& cond = rep.at("condition_report");
    std::string coeff = "rejected", clean_total = "rejected", poison_total = "rejected";
    if (rep.at("bounds").at("clean_bound").is_object()) {
      coeff = json(rep["bounds"]["clean_bound"]["extras"]["coefficient"]).dump();
      clean_total = json(rep["bounds"]["clean_bound"]["total"]).dump();
    }
    if (rep.at("bounds").at("poison_bound_error_form").is_object())
      poison_total = json(rep["bounds"]["poison_bound_error_form"]["total"]).dump();
    csv << value << ',' << cond.at("clean_acc") << ',' << cond.at("target_acc") << ','
        << cond.at("asr") << ',' << cond.at("epsilon_c1") << ',' << cond.at("similarity_k") << ','
        << cond.at("tau_c3") << ',' << cond.at("v_adv") << ',' << cond.at("v_sc") << ','
        << rep.at("trigger_stats").at("max_linf_eval") << ',' << coeff << ',' << clean_total << ','
        << poison_total << "\n";
    json row{{"value", value}, {"report_dir", sub_dir.string()}, {"condition_report", cond}};
    rows.push_back(row);
    if (axis != "trigger_kind") {
      xs.push_back(std::stod(value));
      ys_asr.push_back(cond.at("asr").get<double>());
      ys_acc.push_back(cond.at("clean_acc").get<double>());
    }
  }
  write_text(out_dir / "sweep.csv", csv.str());
  json agg{{"axis", axis}, {"rows", rows}};
  write_text(out_dir / "sweep.json", agg.dump(2) + "\n");
  if (!xs.empty()) {
    write_line_chart(out_dir / "sweep_metrics.svg", "sweep over " + axis, axis, "rate",
                     {{"asr", xs, ys_asr}, {"clean_acc", xs, ys_acc}});
  }
  return agg;
}

json regenerate_report(const fs::path& run_dir) {
  const fs::path manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw std::runtime_error("report: no manifest in " + run_dir.string());
  std::ifstream is(manifest_path);
  json manifest = json::parse(is);
  for (const auto& [rel, sha] : manifest.at("files").items()) {
    const fs::path p = run_dir / rel;
    if (!fs::exists(p)) throw std::runtime_error("report: missing artifact " + rel);
    if (sha256_file(p) != sha.get<std::string>())
      throw std::runtime_error("report: manifest hash mismatch for " + rel);
  }
  RunConfig cfg = RunConfig::from_file(run_dir / "config.json");
  return run_pipeline(cfg, run_dir, Stage::kReport);
}

}  // namespace plab
