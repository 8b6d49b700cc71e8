#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "plab/data.hpp"
#include "plab/graph.hpp"
#include "plab/rng.hpp"

namespace plab {

struct AdvTrainParams {
  int steps = 10;
  float budget = 8.f / 255.f;
  float step_size = 0.f;  // 0 means budget / 8
};

struct TrainConfig {
  int epochs = 30;
  float lr = 0.01f;
  std::vector<int> lr_milestones;  // 1-based epochs; lr *= lr_factor entering each
  float lr_factor = 0.8f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  int batch = 64;
  bool augment = false;
  std::optional<AdvTrainParams> adversarial;
  std::uint64_t seed = 0;
  // Parameter snapshots kept per epoch (ring of the most recent ones); used
  // by the capacity estimates downstream. 0 disables snapshots.
  int snapshot_limit = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  float lr = 0.f;
  float loss = 0.f;
  float acc = 0.f;
  std::optional<float> adv_loss;
  std::optional<float> adv_acc;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  bool adversarial = false;
  std::vector<std::vector<Tensor>> snapshots;  // parameter sets, oldest first

  std::string csv() const;  // epoch, lr, loss, acc [, adv_loss, adv_acc]
  void write_csv(const std::filesystem::path& path) const;
};

using EpochObserver = std::function<void(int epoch, const Graph& net)>;

/// Minibatch SGD with momentum, weight decay, and the milestone learning-rate
/// schedule. With `adversarial` set, every batch is replaced by PGD examples
/// (full-image support) before the step, and augmentation runs after the
/// attack. Deterministic for fixed seeds; aborts with a diagnostic if the
/// loss stops being finite. The observer, when given, runs after each epoch
/// with read access to the net.
TrainHistory train(Graph& net, const Dataset& data, const TrainConfig& cfg,
                   const EpochObserver& on_epoch = {});

/// Per-image, independent: horizontal flip with probability 0.5, then a
/// random crop from a 4-pixel zero padding back to the original size.
Tensor augment_batch(const Tensor& batch, const std::vector<int>& sample_shape, Rng& rng);
Tensor flip_horizontal(const Tensor& image);  // [C,H,W]

}  // namespace plab
