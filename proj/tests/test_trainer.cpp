#include <doctest.h>

#include <cmath>

#include "plab/data.hpp"
#include "plab/metrics.hpp"
#include "plab/model_zoo.hpp"
#include "plab/trainer.hpp"

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

Dataset separable_2d(int per_class, std::uint64_t seed) {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = per_class;
  spec.c = 1;
  spec.h = 1;
  spec.w = 2;
  spec.sigma = 0.04f;
  spec.centers = {{0.25f, 0.25f}, {0.75f, 0.75f}};
  return synth_clusters(spec, seed);
}

}  // namespace

TEST_CASE("train validates its configuration") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.epochs = 1;
  cfg.lr_factor = 0.f;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.lr_factor = 0.8f;
  cfg.lr_milestones = {20, 10};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("an epoch with zero learning rate leaves parameters unchanged") {
  Dataset ds = separable_2d(20, 3);
  Graph net = build_mlp(mlp_spec(8, 1, 1, 1, 2, 2), 5);
  const auto before = net.params();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0.f;
  cfg.weight_decay = 0.f;
  cfg.seed = 1;
  TrainHistory h = train(net, ds, cfg);
  CHECK(h.epochs.size() == 1);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(net.params()[i].data == before[i].data);
}

TEST_CASE("a linearly separable set trains to full accuracy") {
  Dataset ds = separable_2d(60, 9);
  Graph net = build_mlp(mlp_spec(16, 1, 1, 1, 2, 2), 5);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 0.1f;
  cfg.batch = 16;
  cfg.seed = 2;
  TrainHistory h = train(net, ds, cfg);
  CHECK(eval_accuracy(net, ds) == doctest::Approx(1.0));
  CHECK(h.epochs.back().loss < h.epochs.front().loss);  // risk fell below initialization
}

TEST_CASE("training is deterministic for fixed seeds") {
  Dataset ds = separable_2d(30, 4);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.lr = 0.05f;
  cfg.batch = 8;
  cfg.augment = false;
  cfg.seed = 11;
  Graph a = build_mlp(mlp_spec(8, 1, 1, 1, 2, 2), 5);
  Graph b = build_mlp(mlp_spec(8, 1, 1, 1, 2, 2), 5);
  train(a, ds, cfg);
  train(b, ds, cfg);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].data == b.params()[i].data);
}

TEST_CASE("the learning-rate schedule is non-increasing and hits milestones") {
  Dataset ds = separable_2d(10, 4);
  Graph net = build_mlp(mlp_spec(4, 1, 1, 1, 2, 2), 5);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.lr = 0.1f;
  cfg.lr_factor = 0.8f;
  cfg.lr_milestones = {3, 5};
  cfg.seed = 1;
  TrainHistory h = train(net, ds, cfg);
  REQUIRE(h.epochs.size() == 6);
  for (std::size_t i = 1; i < h.epochs.size(); ++i) CHECK(h.epochs[i].lr <= h.epochs[i - 1].lr);
  CHECK(h.epochs[0].lr == doctest::Approx(0.1f));
  CHECK(h.epochs[2].lr == doctest::Approx(0.08f));
  CHECK(h.epochs[4].lr == doctest::Approx(0.064f));
}

TEST_CASE("augmentation preserves shape and is deterministic per seed") {
  Dataset ds = separable_2d(4, 8);
  SynthSpec img_spec;
  img_spec.classes = 2;
  img_spec.per_class = 3;
  img_spec.c = 1;
  img_spec.h = 8;
  img_spec.w = 8;
  img_spec.sigma = 0.2f;
  Dataset imgs = synth_clusters(img_spec, 3);
  Rng r1(5), r2(5), r3(6);
  Tensor a = augment_batch(imgs.images, imgs.sample_shape(), r1);
  Tensor b = augment_batch(imgs.images, imgs.sample_shape(), r2);
  Tensor c = augment_batch(imgs.images, imgs.sample_shape(), r3);
  CHECK(a.shape == imgs.images.shape);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
  (void)ds;
}

TEST_CASE("horizontal flip is an involution") {
  Tensor img({1, 2, 3}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f});
  Tensor once = flip_horizontal(img);
  CHECK(once.data == std::vector<float>{3.f, 2.f, 1.f, 6.f, 5.f, 4.f});
  CHECK(flip_horizontal(once).data == img.data);
}

TEST_CASE("adversarial training with zero budget matches plain training") {
  Dataset ds = separable_2d(30, 4);
  TrainConfig plain;
  plain.epochs = 5;
  plain.lr = 0.05f;
  plain.batch = 8;
  plain.seed = 11;
  TrainConfig adv = plain;
  adv.adversarial = AdvTrainParams{5, 0.f, 0.f};

  Graph a = build_mlp(mlp_spec(8, 1, 1, 1, 2, 2), 5);
  Graph b = build_mlp(mlp_spec(8, 1, 1, 1, 2, 2), 5);
  train(a, ds, plain);
  TrainHistory hb = train(b, ds, adv);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].data == b.params()[i].data);
  CHECK(hb.adversarial);
  CHECK(hb.epochs.back().adv_loss.has_value());
  CHECK(hb.epochs.back().adv_acc.has_value());
}

TEST_CASE("adversarial training improves robust accuracy over plain training") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 50;
  spec.c = 1;
  spec.h = 1;
  spec.w = 4;
  spec.sigma = 0.05f;
  spec.centers = {{0.35f, 0.35f, 0.35f, 0.35f}, {0.65f, 0.65f, 0.65f, 0.65f}};
  Dataset ds = synth_clusters(spec, 19);

  TrainConfig plain;
  plain.epochs = 40;
  plain.lr = 0.05f;
  plain.batch = 16;
  plain.seed = 7;
  TrainConfig at = plain;
  const float budget = 0.1f;
  at.adversarial = AdvTrainParams{5, budget, 0.f};

  Graph clean_net = build_mlp(mlp_spec(16, 1, 1, 1, 4, 2), 5);
  Graph robust_net = build_mlp(mlp_spec(16, 1, 1, 1, 4, 2), 5);
  train(clean_net, ds, plain);
  train(robust_net, ds, at);

  PgdParams p;
  p.budget = budget;
  p.steps = 10;
  auto robust_acc = [&](const Graph& net) {
    int correct = 0;
    for (int i = 0; i < ds.size(); ++i) {
      Tensor x = ds.sample(i);
      const int y = ds.labels[static_cast<std::size_t>(i)];
      Tensor d = pgd_attack(net, x, y, p, nullptr);
      for (std::size_t k = 0; k < x.data.size(); ++k) x.data[k] += d.data[k];
      correct += classify(net, x) == y;
    }
    return static_cast<double>(correct) / ds.size();
  };
  CHECK(robust_acc(robust_net) >= robust_acc(clean_net));
}

TEST_CASE("history csv carries the adversarial columns only when relevant") {
  Dataset ds = separable_2d(10, 4);
  Graph net = build_mlp(mlp_spec(4, 1, 1, 1, 2, 2), 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 0.01f;
  cfg.seed = 1;
  TrainHistory h = train(net, ds, cfg);
  CHECK(h.csv().rfind("epoch,lr,loss,acc\n", 0) == 0);
  cfg.adversarial = AdvTrainParams{2, 0.05f, 0.f};
  Graph net2 = build_mlp(mlp_spec(4, 1, 1, 1, 2, 2), 5);
  TrainHistory h2 = train(net2, ds, cfg);
  CHECK(h2.csv().rfind("epoch,lr,loss,acc,adv_loss,adv_acc\n", 0) == 0);
}
