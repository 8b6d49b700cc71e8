#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "plab/data.hpp"
#include "plab/rng.hpp"
#include "plab/trigger.hpp"

using namespace plab;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<char*>(b), 4);
}

struct IdxFixture {
  fs::path images = fs::temp_directory_path() / "plab_idx_images";
  fs::path labels = fs::temp_directory_path() / "plab_idx_labels";

  IdxFixture(int n, int rows, int cols, int label_n, unsigned char pixel = 255) {
    std::ofstream im(images, std::ios::binary);
    put_be32(im, 0x00000803);
    put_be32(im, static_cast<std::uint32_t>(n));
    put_be32(im, static_cast<std::uint32_t>(rows));
    put_be32(im, static_cast<std::uint32_t>(cols));
    for (int i = 0; i < n * rows * cols; ++i) im.put(static_cast<char>(pixel));
    std::ofstream lb(labels, std::ios::binary);
    put_be32(lb, 0x00000801);
    put_be32(lb, static_cast<std::uint32_t>(label_n));
    for (int i = 0; i < label_n; ++i) lb.put(static_cast<char>(i % 2));
  }
  ~IdxFixture() {
    fs::remove(images);
    fs::remove(labels);
  }
};

// Plain perceptron: converges iff the representation admits a separating
// hyperplane; used as an independent separability oracle on desk data.
bool perceptron_separable(const Dataset& ds, int epochs = 200) {
  const std::int64_t dim = ds.sample_numel();
  std::vector<double> w(static_cast<std::size_t>(dim) + 1, 0.0);
  for (int ep = 0; ep < epochs; ++ep) {
    int mistakes = 0;
    for (int i = 0; i < ds.size(); ++i) {
      Tensor x = ds.sample(i);
      double s = w.back();
      for (std::int64_t k = 0; k < dim; ++k) s += w[static_cast<std::size_t>(k)] * x.data[static_cast<std::size_t>(k)];
      const int y = ds.labels[static_cast<std::size_t>(i)] == 1 ? 1 : -1;
      if (y * s <= 0) {
        ++mistakes;
        for (std::int64_t k = 0; k < dim; ++k) w[static_cast<std::size_t>(k)] += y * x.data[static_cast<std::size_t>(k)];
        w.back() += y;
      }
    }
    if (mistakes == 0) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("idx loader reads images and scales to [0,1]") {
  IdxFixture fx(3, 28, 28, 3);
  Dataset ds = load_idx(fx.images, fx.labels);
  CHECK(ds.size() == 3);
  CHECK(ds.sample_shape() == std::vector<int>{1, 28, 28});
  CHECK(ds.images.data[0] == doctest::Approx(1.f));  // byte 255 -> 1.0
  CHECK(ds.labels == std::vector<int>{0, 1, 0});
}

TEST_CASE("idx loader rejects bad magic and count mismatch") {
  {
    IdxFixture fx(2, 4, 4, 3);  // label count differs
    CHECK_THROWS_AS(load_idx(fx.images, fx.labels), std::runtime_error);
  }
  const fs::path bad = fs::temp_directory_path() / "plab_idx_badmagic";
  {
    std::ofstream os(bad, std::ios::binary);
    put_be32(os, 0x00000999);
    put_be32(os, 1);
    put_be32(os, 4);
    put_be32(os, 4);
  }
  IdxFixture fx(1, 4, 4, 1);
  CHECK_THROWS_AS(load_idx(bad, fx.labels), std::runtime_error);
  fs::remove(bad);
}

TEST_CASE("cifar binary record arithmetic") {
  const fs::path p = fs::temp_directory_path() / "plab_cifar_test.bin";
  {
    std::ofstream os(p, std::ios::binary);
    for (int rec = 0; rec < 10; ++rec) {
      os.put(static_cast<char>(rec % 10));
      for (int i = 0; i < 3072; ++i) os.put(static_cast<char>(128));
    }
  }
  Dataset ds = load_cifar_binary({p});
  CHECK(ds.size() == 10);
  CHECK(ds.sample_shape() == std::vector<int>{3, 32, 32});

  {
    std::ofstream os(p, std::ios::binary);
    for (int i = 0; i < 3074; ++i) os.put(0);
  }
  CHECK_THROWS_AS(load_cifar_binary({p}), std::runtime_error);
  fs::remove(p);
}

TEST_CASE("synthetic clusters: sigma 0 reproduces the centers") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 3;
  spec.c = 1;
  spec.h = 1;
  spec.w = 2;
  spec.sigma = 0.f;
  spec.centers = {{0.2f, 0.3f}, {0.7f, 0.8f}};
  Dataset ds = synth_clusters(spec, 4);
  for (int i = 0; i < ds.size(); ++i) {
    Tensor x = ds.sample(i);
    const auto& c = spec.centers[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])];
    CHECK(x.data[0] == c[0]);
    CHECK(x.data[1] == c[1]);
  }
}

TEST_CASE("synthetic clusters are deterministic per seed") {
  SynthSpec spec;
  spec.sigma = 0.1f;
  Dataset a = synth_clusters(spec, 9);
  Dataset b = synth_clusters(spec, 9);
  Dataset c = synth_clusters(spec, 10);
  CHECK(a.images.data == b.images.data);
  CHECK(a.images.data != c.images.data);
}

TEST_CASE("well-separated clusters are perceptron-separable") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 40;
  spec.c = 1;
  spec.h = 1;
  spec.w = 2;
  spec.sigma = 0.02f;
  spec.centers = {{0.2f, 0.2f}, {0.8f, 0.8f}};
  Dataset ds = synth_clusters(spec, 12);
  CHECK(perceptron_separable(ds));
}

TEST_CASE("poison plan selects a floor-sized uniform subset of the target class") {
  SynthSpec spec;
  spec.classes = 3;
  spec.per_class = 200;
  Dataset ds = synth_clusters(spec, 5);
  PoisonPlan plan = make_poison_plan(ds, 1, 0.1, 77);
  CHECK(plan.selected.size() == 20);  // floor(0.1 * 200)
  for (int idx : plan.selected) CHECK(ds.labels[static_cast<std::size_t>(idx)] == 1);
  CHECK(std::is_sorted(plan.selected.begin(), plan.selected.end()));

  PoisonPlan again = make_poison_plan(ds, 1, 0.1, 77);
  CHECK(again.selected == plan.selected);
  PoisonPlan other = make_poison_plan(ds, 1, 0.1, 78);
  CHECK(other.selected != plan.selected);

  CHECK_THROWS_AS(make_poison_plan(ds, 1, 1.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_poison_plan(ds, 9, 0.1, 1), std::invalid_argument);
}

namespace {

TriggerSet constant_triggers(const Dataset& ds, float value, float budget) {
  TriggerSet ts;
  ts.kind = TriggerKind::kRnLinf;
  ts.budget = budget;
  for (int i = 0; i < ds.size(); ++i) {
    ts.indices.push_back(i);
    ts.deltas.push_back(Tensor::full(ds.sample_shape(), value));
  }
  return ts;
}

}  // namespace

TEST_CASE("poisoned set keeps labels and clamps pixels") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 50;
  Dataset ds = synth_clusters(spec, 21);
  TriggerSet ts = constant_triggers(ds, 0.9f, 1.f);

  PoisonedDataset p = build_poisoned_set(ds, ts, 0, 0.5, 3);
  CHECK(p.data.labels == ds.labels);  // clean-label invariant
  CHECK(p.plan.selected.size() == 25);
  int flagged = 0;
  for (std::size_t i = 0; i < p.poisoned.size(); ++i) flagged += p.poisoned[i];
  CHECK(flagged == 25);
  for (float v : p.data.images.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  // Unselected samples are untouched.
  for (int i = 0; i < ds.size(); ++i) {
    if (p.poisoned[static_cast<std::size_t>(i)]) continue;
    CHECK(p.data.sample(i).data == ds.sample(i).data);
  }
}

TEST_CASE("alpha 0 and alpha 1 are the degenerate poisoning cases") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 30;
  Dataset ds = synth_clusters(spec, 8);
  TriggerSet ts = constant_triggers(ds, 0.05f, 0.05f);

  PoisonedDataset none = build_poisoned_set(ds, ts, 0, 0.0, 3);
  CHECK(none.data.images.data == ds.images.data);
  CHECK(none.plan.selected.empty());

  PoisonedDataset all = build_poisoned_set(ds, ts, 0, 1.0, 3);
  CHECK(all.plan.selected.size() == 30);
  CHECK(all.data.labels == ds.labels);
  // poisoned pixels stay within the budget of the clean ones
  for (int i = 0; i < ds.size(); ++i)
    CHECK(linf_dist(all.data.sample(i), ds.sample(i)) <= 0.05f + 1e-7f);
}

TEST_CASE("trigger budget violations are rejected at poisoning time") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 10;
  Dataset ds = synth_clusters(spec, 8);
  TriggerSet ts = constant_triggers(ds, 0.5f, 0.1f);  // delta exceeds declared budget
  CHECK_THROWS_AS(build_poisoned_set(ds, ts, 0, 1.0, 3), std::runtime_error);
}

TEST_CASE("cifar loader concatenates multiple files") {
  namespace fs2 = std::filesystem;
  const fs2::path p1 = fs2::temp_directory_path() / "plab_cifar_a.bin";
  const fs2::path p2 = fs2::temp_directory_path() / "plab_cifar_b.bin";
  for (auto [p, n] : {std::pair{p1, 3}, std::pair{p2, 2}}) {
    std::ofstream os(p, std::ios::binary);
    for (int rec = 0; rec < n; ++rec) {
      os.put(static_cast<char>(rec));
      for (int i = 0; i < 3072; ++i) os.put(static_cast<char>(64));
    }
  }
  Dataset ds = load_cifar_binary({p1, p2});
  CHECK(ds.size() == 5);
  CHECK(ds.labels == std::vector<int>{0, 1, 2, 0, 1});
  fs2::remove(p1);
  fs2::remove(p2);
}
