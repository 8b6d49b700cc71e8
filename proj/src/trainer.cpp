#include "plab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "plab/model_zoo.hpp"
#include "plab/optim.hpp"
#include "plab/trigger.hpp"

namespace plab {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (!(lr >= 0.f)) throw std::invalid_argument("train config: bad learning rate");
  if (!(lr_factor > 0.f && lr_factor <= 1.f))
    throw std::invalid_argument("train config: lr_factor must be in (0,1]");
  if (!std::is_sorted(lr_milestones.begin(), lr_milestones.end()))
    throw std::invalid_argument("train config: milestones must be sorted");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (adversarial && adversarial->steps < 1)
    throw std::invalid_argument("train config: adversarial steps must be >= 1");
}

std::string TrainHistory::csv() const {
  std::ostringstream os;
  os << "epoch,lr,loss,acc";
  if (adversarial) os << ",adv_loss,adv_acc";
  os << "\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.lr << ',' << e.loss << ',' << e.acc;
    if (adversarial) os << ',' << e.adv_loss.value_or(0.f) << ',' << e.adv_acc.value_or(0.f);
    os << "\n";
  }
  return os.str();
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  os << csv();
  if (!os) throw std::runtime_error("history: write failed for " + path.string());
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("flip_horizontal: expects [C,H,W]");
  const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
  Tensor out = image;
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        out.data[static_cast<std::size_t>((ch * h + i) * w + j)] =
            image.data[static_cast<std::size_t>((ch * h + i) * w + (w - 1 - j))];
  return out;
}

namespace {

constexpr int kCropPad = 4;

Tensor crop_shifted(const Tensor& image, int dy, int dx) {
  const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
  Tensor out = Tensor::zeros(image.shape);
  // Source pixel (i+dy-pad, j+dx-pad); zeros outside.
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i) {
      const int si = i + dy - kCropPad;
      if (si < 0 || si >= h) continue;
      for (int j = 0; j < w; ++j) {
        const int sj = j + dx - kCropPad;
        if (sj < 0 || sj >= w) continue;
        out.data[static_cast<std::size_t>((ch * h + i) * w + j)] =
            image.data[static_cast<std::size_t>((ch * h + si) * w + sj)];
      }
    }
  return out;
}

}  // namespace

Tensor augment_batch(const Tensor& batch, const std::vector<int>& sample_shape, Rng& rng) {
  const std::int64_t per = shape_numel(sample_shape);
  if (batch.numel() % per != 0) throw std::invalid_argument("augment: batch/sample mismatch");
  const int b = static_cast<int>(batch.numel() / per);
  Tensor out = batch;
  for (int bi = 0; bi < b; ++bi) {
    Tensor img = Tensor::zeros(sample_shape);
    std::copy_n(batch.data.begin() + static_cast<std::int64_t>(bi) * per, per, img.data.begin());
    if (rng.bernoulli(0.5)) img = flip_horizontal(img);
    const int dy = static_cast<int>(rng.next_below(2 * kCropPad + 1));
    const int dx = static_cast<int>(rng.next_below(2 * kCropPad + 1));
    img = crop_shifted(img, dy, dx);
    std::copy_n(img.data.begin(), per, out.data.begin() + static_cast<std::int64_t>(bi) * per);
  }
  return out;
}

TrainHistory train(Graph& net, const Dataset& data, const TrainConfig& cfg,
                   const EpochObserver& on_epoch) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("train: dataset is empty");

  const auto sample_shape = data.sample_shape();
  const std::int64_t per = data.sample_numel();
  const int n = data.size();

  OptimState opt;
  opt.lr = cfg.lr;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;

  Rng base(cfg.seed);
  TrainHistory hist;
  hist.adversarial = cfg.adversarial.has_value();

  EvalWorkspace ws;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  float lr = cfg.lr;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (std::binary_search(cfg.lr_milestones.begin(), cfg.lr_milestones.end(), epoch))
      lr *= cfg.lr_factor;
    opt.lr = lr;

    Rng shuffle_rng = base.split(0x5000 + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.next_below(i))]);
    Rng aug_rng = base.split(0xA000 + static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0, adv_loss_sum = 0.0;
    std::int64_t correct = 0, adv_correct = 0, seen = 0;

    for (int start = 0; start < n; start += cfg.batch) {
      const int bsz = std::min(cfg.batch, n - start);
      Tensor batch = Tensor::zeros({bsz, sample_shape[0], sample_shape[1], sample_shape[2]});
      std::vector<int> labels(static_cast<std::size_t>(bsz));
      for (int bi = 0; bi < bsz; ++bi) {
        const int idx = order[static_cast<std::size_t>(start + bi)];
        std::copy_n(data.images.data.begin() + static_cast<std::int64_t>(idx) * per, per,
                    batch.data.begin() + static_cast<std::int64_t>(bi) * per);
        labels[static_cast<std::size_t>(bi)] = data.labels[static_cast<std::size_t>(idx)];
      }

      auto batch_correct = [&](const Tensor& probs) {
        std::int64_t c = 0;
        const int m = probs.shape.back();
        for (int bi = 0; bi < bsz; ++bi)
          c += argmax_row(probs.data.data() + static_cast<std::int64_t>(bi) * m, m) ==
               labels[static_cast<std::size_t>(bi)];
        return c;
      };

      if (cfg.adversarial) {
        // Clean pass for the bookkeeping the adversarial history carries.
        const float clean_loss = forward_loss(net, batch, labels, ws);
        loss_sum += static_cast<double>(clean_loss) * bsz;
        correct += batch_correct(ws.value[static_cast<std::size_t>(net.output_node())]);
        if (cfg.adversarial->budget > 0.f) {
          PgdParams p;
          p.budget = cfg.adversarial->budget;
          p.steps = cfg.adversarial->steps;
          p.step_size = cfg.adversarial->step_size;
          Tensor delta = pgd_perturb_batch(net, batch, labels, p, nullptr, PgdMode::kAscent);
          for (std::size_t k = 0; k < batch.data.size(); ++k) batch.data[k] += delta.data[k];
        }
      }
      if (cfg.augment) batch = augment_batch(batch, sample_shape, aug_rng);

      float loss;
      try {
        loss = forward_loss(net, batch, labels, ws);
      } catch (const std::exception& e) {
        throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      const std::int64_t step_correct = batch_correct(ws.value[static_cast<std::size_t>(net.output_node())]);
      if (cfg.adversarial) {
        adv_loss_sum += static_cast<double>(loss) * bsz;
        adv_correct += step_correct;
      } else {
        loss_sum += static_cast<double>(loss) * bsz;
        correct += step_correct;
      }
      seen += bsz;

      backward(net, ws);
      sgd_step(net, ws, opt);
    }

    EpochStats st;
    st.epoch = epoch;
    st.lr = lr;
    st.loss = static_cast<float>(loss_sum / static_cast<double>(seen));
    st.acc = static_cast<float>(correct) / static_cast<float>(seen);
    if (cfg.adversarial) {
      st.adv_loss = static_cast<float>(adv_loss_sum / static_cast<double>(seen));
      st.adv_acc = static_cast<float>(adv_correct) / static_cast<float>(seen);
    }
    hist.epochs.push_back(st);

    if (cfg.snapshot_limit > 0) {
      hist.snapshots.push_back(net.params());
      if (static_cast<int>(hist.snapshots.size()) > cfg.snapshot_limit)
        hist.snapshots.erase(hist.snapshots.begin());
    }
    if (on_epoch) on_epoch(epoch, net);
  }
  return hist;
}

}  // namespace plab
