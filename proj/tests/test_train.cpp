#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mdgait/error.hpp"
#include "mdgait/rng.hpp"
#include "mdgait/train.hpp"

using namespace mdgait;
using namespace mdgait::train;
using T = ad::Tensor<double>;

namespace {

TrainConfig sched(double lr, double warm) {
  TrainConfig c;
  c.lr_initial = lr;
  c.warmup_fraction = warm;
  return c;
}

// Tiny labelled frames: class k has a bright band at row 2k.
tfr::Dataset band_dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
  tfr::Dataset d;
  Rng rng(seed);
  for (std::size_t c = 0; c < classes; ++c) d.subject_ids.push_back(static_cast<std::uint32_t>(c));
  for (int split = 0; split < 2; ++split)
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t i = 0; i < per_class; ++i) {
        tfr::FrameSample f;
        f.spec = Matrix(8, 8);
        f.cvd = Matrix(8, 8);
        for (auto& v : f.spec.data) v = rng.uniform(-60, -40);
        for (auto& v : f.cvd.data) v = rng.uniform(-60, -40);
        for (std::size_t x = 0; x < 8; ++x) {
          f.spec(2 * c, x) = 0.0;
          f.cvd(x, 2 * c) = 0.0;
        }
        f.label = static_cast<std::uint32_t>(c);
        (split == 0 ? d.train : d.test).push_back(std::move(f));
      }
  return d;
}

model::ModelConfig tiny(std::size_t classes) {
  model::ModelConfig c;
  c.vit.image_size = 16;
  c.vit.patch_size = 8;
  c.vit.hidden_dim = 16;
  c.vit.depth = 1;
  c.vit.heads = 2;
  c.vit.mlp_dim = 32;
  c.vit.feature_dim = 16;
  c.num_classes = classes;
  return c;
}

}  // namespace

TEST_CASE("lr_at: warmup, peak, linear decay") {
  const auto c = sched(0.01, 0.1);
  CHECK(lr_at(0, 1000, c) == 0.0);
  CHECK(lr_at(100, 1000, c) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(std::abs(lr_at(50, 1000, c) - 0.005) <= 1e-12);
  CHECK(std::abs(lr_at(550, 1000, c) - 0.005) <= 1e-12);
  CHECK(lr_at(999, 1000, c) > 0.0);
  CHECK_THROWS_AS(lr_at(1000, 1000, c), InvalidArgument);
  const auto flat = sched(0.2, 0.0);
  CHECK(lr_at(0, 10, flat) == 0.2);
}

TEST_CASE("lr_at: area equals the trapezoid closed form") {
  for (std::size_t total : {10u, 97u, 1000u, 12345u}) {
    const auto c = sched(0.03, 0.1);
    double area = 0;
    for (std::size_t s = 0; s < total; ++s) area += lr_at(s, total, c);
    // Warmup triangle sum_{s<W} lr*s/W plus decay sum_{s>=W} lr*(N-s)/(N-W).
    const double n = static_cast<double>(total), w = 0.1 * n;
    const auto first_decay = static_cast<std::size_t>(std::ceil(w));
    const double k = static_cast<double>(first_decay);
    const double warm = 0.03 / w * (k - 1) * k / 2.0;
    const double m = n - k;  // decay steps, values (N-s) run from N-k down to 1
    const double decay = 0.03 / (n - w) * (m + 1) * m / 2.0;
    const double closed = warm + decay;
    CHECK(std::abs(area - closed) / closed <= 1e-6);
  }
}

TEST_CASE("sgd_update: vanilla step, velocity persistence, scalar recurrence") {
  std::vector<double> p{1.0, -2.0}, v{0.0, 0.0};
  const std::vector<double> g{0.5, 0.25};
  sgd_update<double>(p, g, v, 0.1, 0.0, 0.0);
  CHECK(p[0] == doctest::Approx(0.95));
  CHECK(p[1] == doctest::Approx(-2.025));

  std::vector<double> q{1.0}, vq{2.0};
  const std::vector<double> zero{0.0};
  sgd_update<double>(q, zero, vq, 0.1, 0.9, 0.0);
  CHECK(vq[0] == doctest::Approx(1.8));
  CHECK(q[0] == doctest::Approx(1.0 - 0.18));

  // f(x) = 0.5 a x^2, two steps with momentum and weight decay.
  const double a = 3.0, lr = 0.05, mom = 0.9, wd = 0.01;
  double x = 2.0, vel = 0.0;
  std::vector<double> xp{2.0}, vp{0.0};
  for (int step = 0; step < 2; ++step) {
    vel = mom * vel + a * x + wd * x;
    x -= lr * vel;
    const std::vector<double> grad{a * xp[0]};
    sgd_update<double>(xp, grad, vp, lr, mom, wd);
    CHECK(std::abs(xp[0] - x) <= 1e-7);
  }
  CHECK_THROWS_AS(sgd_update<double>(xp, std::vector<double>{1, 2}, vp, lr, mom, wd), ShapeError);
}

TEST_CASE("sgd: weight decay shrinks the parameter norm") {
  auto p = T::from_data({3}, {1.0, -2.0, 0.5}, true);
  SgdMomentum<double> opt({p}, 0.9, 1e-2);
  const double before = std::sqrt(std::inner_product(p.values().begin(), p.values().end(), p.values().begin(), 0.0));
  opt.step(0.1);
  const double after = std::sqrt(std::inner_product(p.values().begin(), p.values().end(), p.values().begin(), 0.0));
  CHECK(after < before);
}

TEST_CASE("fit: convex one-parameter objective decreases after warmup") {
  auto w = T::from_data({1}, {5.0}, true);
  TrainConfig cfg;
  cfg.lr_initial = 0.02;
  cfg.momentum = 0.5;
  cfg.weight_decay = 0.0;
  cfg.batch_size = 4;
  cfg.epochs = 10;
  cfg.warmup_fraction = 0.1;
  BatchFn<double> batch = [&](std::span<const std::size_t>) {
    return BatchResult<double>{ad::sum(ad::hadamard(w, w)), 0};
  };
  const auto run = fit<double>({w}, 8, batch, {}, cfg);
  REQUIRE(run.epochs.size() == 10);
  for (std::size_t e = 1; e < run.epochs.size(); ++e) CHECK(run.epochs[e].train_loss < run.epochs[e - 1].train_loss);
  CHECK(run.epochs.back().lr < 0.1);
  CHECK_THROWS_AS(fit<double>({w}, 0, batch, {}, cfg), InvalidArgument);
}

TEST_CASE("score: hand-enumerated 20-frame fixture") {
  const std::vector<std::size_t> truth{0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2};
  const std::vector<std::size_t> pred{0, 0, 0, 0, 0, 1, 2, 1, 1, 1, 1, 0, 0, 2, 2, 2, 2, 2, 1, 2};
  const auto ev = score(truth, pred, 3);
  CHECK(ev.total == 20);
  CHECK(ev.correct == 15);
  CHECK(ev.accuracy == doctest::Approx(0.75));
  CHECK(ev.confusion[0] == std::vector<std::size_t>{5, 1, 1});
  CHECK(ev.confusion[1] == std::vector<std::size_t>{2, 4, 0});
  CHECK(ev.confusion[2] == std::vector<std::size_t>{0, 1, 6});

  const auto perfect = score(truth, truth, 3);
  CHECK(perfect.accuracy == 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) CHECK(perfect.confusion[i][j] == 0);

  std::vector<std::size_t> balanced, constant(12, 1);
  for (std::size_t i = 0; i < 12; ++i) balanced.push_back(i % 4);
  CHECK(score(balanced, constant, 4).accuracy == doctest::Approx(0.25));
  CHECK_THROWS_AS(score(truth, constant, 3), InvalidArgument);
}

TEST_CASE("batch_images: zeroed stream and stream modes") {
  const auto d = band_dataset(2, 2, 1);
  const std::vector<std::size_t> idx{0, 3};
  const auto spec = batch_images<float>(d.train, idx, false, 16);
  const auto zero = batch_images<float>(d.train, idx, false, 16, true);
  CHECK(spec.shape() == ad::Shape{2, 16, 16, 3});
  for (float v : zero.values()) CHECK(v == 0.0f);
  CHECK(*std::max_element(spec.values().begin(), spec.values().end()) == doctest::Approx(1.0f));
  CHECK(parse_stream_mode("cvd") == StreamMode::cvd_only);
  CHECK(std::string(to_string(StreamMode::spectrogram_only)) == "spectrogram");
  CHECK_THROWS_AS(parse_stream_mode("both streams"), ConfigError);
}

TEST_CASE("train_model: zero learning rate leaves parameters unchanged") {
  const auto d = band_dataset(3, 3, 2);
  auto m = model::init_model<float>(tiny(3), 4);
  std::vector<std::vector<float>> before;
  for (auto& p : m.parameters()) before.push_back(p.values());
  TrainConfig cfg;
  cfg.lr_initial = 0.0;
  cfg.batch_size = 4;
  cfg.epochs = 3;
  train_model(m, d, cfg);
  const auto after = m.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].values() == before[i]);
}

TEST_CASE("train_model: learns a separable toy task and is deterministic") {
  const auto d = band_dataset(3, 32, 3);
  TrainConfig cfg;
  cfg.lr_initial = 0.01;
  cfg.batch_size = 8;
  cfg.epochs = 50;
  cfg.seed = 11;
  auto a = model::init_model<float>(tiny(3), 6), b = model::init_model<float>(tiny(3), 6);
  const auto ra = train_model(a, d, cfg), rb = train_model(b, d, cfg);
  for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
    CHECK(ra.epochs[e].train_loss == rb.epochs[e].train_loss);
    CHECK(ra.epochs[e].test_accuracy == rb.epochs[e].test_accuracy);
  }
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].values() == pb[i].values());
  CHECK(ra.best_test_accuracy >= 0.9);
  CHECK(ra.epochs.back().train_loss < ra.epochs.front().train_loss);

  const auto ev = evaluate(a, d.test);
  CHECK(ev.total == d.test.size());
  std::size_t diag = 0;
  for (std::size_t c = 0; c < 3; ++c) diag += ev.confusion[c][c];
  CHECK(diag == ev.correct);

  auto bad = d;
  bad.train[0].label = 7;
  CHECK_THROWS_AS(train_model(a, bad, cfg), InvalidArgument);
}
