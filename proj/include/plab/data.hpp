#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "plab/tensor.hpp"

namespace plab {

struct TriggerSet;  // trigger.hpp

/// Labeled image collection. Images are stored [N,C,H,W] with values in
/// [0,1]; labels are 0-based ints in [0, classes). One-dimensional synthetic
/// data uses C=H=1.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int classes = 0;
  std::string name;

  int size() const { return images.shape.empty() ? 0 : images.shape[0]; }
  std::int64_t sample_numel() const;
  std::vector<int> sample_shape() const;  // [C,H,W]
  Tensor sample(int i) const;
  void set_sample(int i, const Tensor& value);
  std::vector<int> indices_with_label(int label) const;
  void validate() const;
};

/// IDX (ubyte) reader. Pixel bytes are scaled to [0,1] by /255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// CIFAR-10 binary reader: records of 1 label byte + 3072 pixel bytes.
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths);

/// Seeded Gaussian-cluster generator, clamped to [0,1]^n.
struct SynthSpec {
  int classes = 2;
  int per_class = 100;
  int c = 1, h = 1, w = 2;
  float sigma = 0.05f;
  // One center per class, each of length c*h*w. Empty means: draw centers
  // uniformly from [0.2, 0.8]^n using the dataset seed.
  std::vector<std::vector<float>> centers;
};
Dataset synth_clusters(const SynthSpec& spec, std::uint64_t seed);

/// Seeded selection of the target-class subset that receives the trigger.
/// |selected| = floor(alpha * #{i : y_i = target}).
struct PoisonPlan {
  int target_label = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> selected;  // sorted dataset indices, all with target_label
};

PoisonPlan make_poison_plan(const Dataset& base, int target_label, double alpha, std::uint64_t seed);

/// Clean-label poisoned copy of `base`: selected samples become
/// clamp(x + P(x), 0, 1); labels are untouched for every sample.
struct PoisonedDataset {
  Dataset data;
  PoisonPlan plan;
  std::vector<std::uint8_t> poisoned;  // per-sample flag
};

PoisonedDataset build_poisoned_set(const Dataset& base, const TriggerSet& triggers, int target_label,
                                   double alpha, std::uint64_t seed);

}  // namespace plab
