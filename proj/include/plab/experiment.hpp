#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plab/bounds.hpp"
#include "plab/data.hpp"
#include "plab/metrics.hpp"
#include "plab/model_zoo.hpp"
#include "plab/trainer.hpp"
#include "plab/trigger.hpp"

namespace plab {

/// Parsed run configuration (JSON, schema version 1, unknown keys rejected).
/// Seeds are mandatory and explicit; nothing falls back to the wall clock.
struct RunConfig {
  // dataset
  std::string source;  // "synth" | "idx" | "cifar_bin"
  SynthSpec synth;
  int synth_test_per_class = 50;
  std::filesystem::path idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
  std::vector<std::filesystem::path> cifar_train_files, cifar_test_files;

  NetworkSpec victim;
  NetworkSpec f1;
  NetworkSpec f2;
  double f1_fraction = 0.5;  // share of the training set the trigger author sees

  // trigger
  TriggerKind trigger_kind = TriggerKind::kOurs;
  float budget = 16.f / 255.f;
  int mask_corner_h = 8, mask_corner_w = 8;
  int pgd_steps = 8;
  float pgd_step_size = 0.f;
  int l0_count = 200;
  int ua_epochs = 5;

  // poisoning
  int target_label = 0;  // 0-based in memory; reports print 1-based
  double alpha = 0.1;

  TrainConfig train_f1;
  TrainConfig train_victim;
  MinMinSchedule minmin;

  // metrics
  bool metrics_enabled = true;
  VscConfig vsc;
  double eta1 = 0.4;

  // bounds
  double bound_delta = 0.05;
  double bound_c_scale = 1.0;
  double bound_a_norm = 16.0;
  int rad_num_sigma = 400;
  int rad_candidates = 8;
  int rad_samples = 64;

  std::uint64_t seed_data = 0, seed_model = 0, seed_trigger = 0, seed_train = 0;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void apply_seed_override(const std::string& key, std::uint64_t value);
  void validate() const;
};

enum class Stage {
  kData = 0,
  kF1,
  kT1,
  kF2,
  kTriggers,
  kPoison,
  kVictim,
  kMetrics,
  kBounds,
  kReport,
};

const char* stage_name(Stage s);

/// Runs the pipeline up to and including `upto`, persisting every stage's
/// artifacts under out_dir and maintaining manifest.json (sha256 per file).
/// Stages already recorded in a matching manifest are loaded, not recomputed.
/// A stage failure rethrows with the stage name after persisting the partial
/// manifest. Returns the report JSON (complete runs only).
nlohmann::json run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir,
                            Stage upto = Stage::kReport);

/// One run per axis value with shared seeds; writes sweep.csv and charts.
nlohmann::json run_sweep(const RunConfig& cfg, const std::filesystem::path& out_dir,
                         const std::string& axis, const std::vector<std::string>& values);

/// Verifies the manifest hashes of a finished run directory and re-emits
/// report.json, metric CSVs, and the charts from the persisted artifacts.
nlohmann::json regenerate_report(const std::filesystem::path& run_dir);

}  // namespace plab
