#include "plab/data.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "plab/rng.hpp"
#include "plab/trigger.hpp"

namespace plab {

std::int64_t Dataset::sample_numel() const {
  return size() == 0 ? 0 : images.numel() / size();
}

std::vector<int> Dataset::sample_shape() const {
  if (images.rank() != 4) throw std::runtime_error("dataset images must be [N,C,H,W]");
  return {images.shape[1], images.shape[2], images.shape[3]};
}

Tensor Dataset::sample(int i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("dataset sample index");
  const std::int64_t n = sample_numel();
  Tensor t = Tensor::zeros(sample_shape());
  std::copy_n(images.data.begin() + static_cast<std::int64_t>(i) * n, n, t.data.begin());
  return t;
}

void Dataset::set_sample(int i, const Tensor& value) {
  const std::int64_t n = sample_numel();
  if (value.numel() != n) throw std::invalid_argument("set_sample: size mismatch");
  std::copy_n(value.data.begin(), n, images.data.begin() + static_cast<std::int64_t>(i) * n);
}

std::vector<int> Dataset::indices_with_label(int label) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (labels[static_cast<std::size_t>(i)] == label) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw std::runtime_error("dataset images must be [N,C,H,W]");
  if (static_cast<int>(labels.size()) != size())
    throw std::runtime_error("dataset: label count differs from image count");
  for (int y : labels)
    if (y < 0 || y >= classes) throw std::runtime_error("dataset: label out of range");
  for (float v : images.data)
    if (!(v >= 0.f && v <= 1.f)) throw std::runtime_error("dataset: pixel outside [0,1]");
}

namespace {

std::uint32_t read_u32_be(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error(std::string("idx: truncated ") + what);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("idx: cannot open " + images_path.string());
  if (read_u32_be(imgs, "image magic") != 0x00000803u)
    throw std::runtime_error("idx: bad image magic in " + images_path.string());
  const std::uint32_t n = read_u32_be(imgs, "image count");
  const std::uint32_t rows = read_u32_be(imgs, "rows");
  const std::uint32_t cols = read_u32_be(imgs, "cols");

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("idx: cannot open " + labels_path.string());
  if (read_u32_be(labs, "label magic") != 0x00000801u)
    throw std::runtime_error("idx: bad label magic in " + labels_path.string());
  const std::uint32_t n_labels = read_u32_be(labs, "label count");
  if (n != n_labels) throw std::runtime_error("idx: image/label count mismatch");

  const std::int64_t per = static_cast<std::int64_t>(rows) * cols;
  std::vector<unsigned char> buf(static_cast<std::size_t>(per));
  Dataset ds;
  ds.images = Tensor::zeros({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), per);
    if (!imgs) throw std::runtime_error("idx: truncated image payload");
    float* dst = ds.images.data.data() + static_cast<std::int64_t>(i) * per;
    for (std::int64_t k = 0; k < per; ++k) dst[k] = static_cast<float>(buf[static_cast<std::size_t>(k)]) / 255.f;
    char y;
    labs.read(&y, 1);
    if (!labs) throw std::runtime_error("idx: truncated label payload");
    ds.labels[i] = static_cast<int>(static_cast<unsigned char>(y));
  }
  ds.classes = 1 + *std::max_element(ds.labels.begin(), ds.labels.end());
  ds.name = images_path.filename().string();
  ds.validate();
  return ds;
}

Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths) {
  constexpr std::int64_t kRecord = 3073;  // 1 label byte + 3*32*32 pixels
  std::vector<std::vector<unsigned char>> files;
  std::int64_t total = 0;
  for (const auto& p : paths) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cifar: cannot open " + p.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % kRecord != 0)
      throw std::runtime_error("cifar: file size of " + p.string() + " is not a multiple of 3073");
    total += static_cast<std::int64_t>(bytes.size()) / kRecord;
    files.push_back(std::move(bytes));
  }
  Dataset ds;
  ds.images = Tensor::zeros({static_cast<int>(total), 3, 32, 32});
  ds.labels.resize(static_cast<std::size_t>(total));
  std::int64_t i = 0;
  for (const auto& bytes : files) {
    for (std::size_t off = 0; off < bytes.size(); off += kRecord, ++i) {
      ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(bytes[off]);
      float* dst = ds.images.data.data() + i * 3072;
      for (int k = 0; k < 3072; ++k) dst[k] = static_cast<float>(bytes[off + 1 + static_cast<std::size_t>(k)]) / 255.f;
    }
  }
  ds.classes = 10;
  ds.name = "cifar";
  ds.validate();
  return ds;
}

Dataset synth_clusters(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2 || spec.per_class < 1) throw std::invalid_argument("synth: degenerate spec");
  if (spec.sigma < 0.f) throw std::invalid_argument("synth: sigma must be >= 0");
  const std::int64_t dim = static_cast<std::int64_t>(spec.c) * spec.h * spec.w;
  if (dim <= 0) throw std::invalid_argument("synth: empty sample shape");

  Rng rng(seed);
  std::vector<std::vector<float>> centers = spec.centers;
  if (centers.empty()) {
    Rng crng = rng.split(0x6365);
    centers.resize(static_cast<std::size_t>(spec.classes));
    for (auto& c : centers) {
      c.resize(static_cast<std::size_t>(dim));
      for (auto& v : c) v = crng.uniform(0.2f, 0.8f);
    }
  }
  if (static_cast<int>(centers.size()) != spec.classes)
    throw std::invalid_argument("synth: need one center per class");
  for (const auto& c : centers)
    if (static_cast<std::int64_t>(c.size()) != dim) throw std::invalid_argument("synth: center length mismatch");

  const int n = spec.classes * spec.per_class;
  Dataset ds;
  ds.images = Tensor::zeros({n, spec.c, spec.h, spec.w});
  ds.labels.resize(static_cast<std::size_t>(n));
  Rng nrng = rng.split(0x6e6f);
  std::int64_t pos = 0;
  for (int cls = 0; cls < spec.classes; ++cls) {
    for (int k = 0; k < spec.per_class; ++k) {
      const int idx = cls * spec.per_class + k;
      ds.labels[static_cast<std::size_t>(idx)] = cls;
      for (std::int64_t d = 0; d < dim; ++d, ++pos) {
        float v = centers[static_cast<std::size_t>(cls)][static_cast<std::size_t>(d)] + spec.sigma * nrng.normal();
        ds.images.data[static_cast<std::size_t>(pos)] = std::clamp(v, 0.f, 1.f);
      }
    }
  }
  ds.classes = spec.classes;
  ds.name = "synth";
  ds.validate();
  return ds;
}

PoisonPlan make_poison_plan(const Dataset& base, int target_label, double alpha, std::uint64_t seed) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("poison plan: alpha must be in [0,1]");
  if (target_label < 0 || target_label >= base.classes)
    throw std::invalid_argument("poison plan: target label out of range");
  std::vector<int> pool = base.indices_with_label(target_label);
  const auto count = static_cast<std::size_t>(alpha * static_cast<double>(pool.size()));
  // Seeded Fisher-Yates, then sort: a uniform subset with a canonical order.
  Rng rng = Rng(seed).split(0x706f69);
  for (std::size_t i = pool.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(pool[i - 1], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  PoisonPlan plan;
  plan.target_label = target_label;
  plan.alpha = alpha;
  plan.seed = seed;
  plan.selected = std::move(pool);
  return plan;
}

PoisonedDataset build_poisoned_set(const Dataset& base, const TriggerSet& triggers, int target_label,
                                   double alpha, std::uint64_t seed) {
  PoisonedDataset out;
  out.plan = make_poison_plan(base, target_label, alpha, seed);
  out.data = base;
  out.data.name = base.name + "+poison";
  out.poisoned.assign(static_cast<std::size_t>(base.size()), 0);
  for (int idx : out.plan.selected) {
    const Tensor delta = triggers.delta_for(idx);  // throws if missing
    triggers.check_budget(delta);
    Tensor x = base.sample(idx);
    if (delta.numel() != x.numel()) throw std::runtime_error("poison: trigger size mismatch");
    for (std::size_t k = 0; k < x.data.size(); ++k)
      x.data[k] = std::clamp(x.data[k] + delta.data[k], 0.f, 1.f);
    out.data.set_sample(idx, x);
    out.poisoned[static_cast<std::size_t>(idx)] = 1;
  }
  out.data.validate();
  return out;
}

}  // namespace plab
