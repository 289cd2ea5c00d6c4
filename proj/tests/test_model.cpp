#include <doctest.h>

#include <cmath>

#include "mdgait/checkpoint.hpp"
#include "mdgait/error.hpp"
#include "mdgait/model.hpp"
#include "mdgait/rng.hpp"
#include "oracles.hpp"

using namespace mdgait;
using namespace mdgait::model;

namespace {

ModelConfig toy(std::size_t classes = 3) {
  ModelConfig c;
  c.vit.image_size = 32;
  c.vit.patch_size = 16;
  c.vit.hidden_dim = 16;
  c.vit.depth = 2;
  c.vit.heads = 2;
  c.vit.mlp_dim = 32;
  c.vit.feature_dim = 16;
  c.num_classes = classes;
  return c;
}

template <typename T>
ad::Tensor<T> images(std::size_t batch, std::size_t size, Rng& rng) {
  std::vector<T> v(batch * size * size * 3);
  for (auto& x : v) x = static_cast<T>(rng.uniform());
  return ad::Tensor<T>::from_data({batch, size, size, 3}, std::move(v));
}

template <typename T>
void randomize(const AdsVitModel<T>& m, Rng& rng, double scale) {
  for (auto& [name, t] : m.named_parameters())
    for (auto& x : const_cast<ad::Tensor<T>&>(t).data()) x = static_cast<T>(rng.uniform(-scale, scale));
}

}  // namespace

TEST_CASE("model: logits shape and parameter census") {
  Rng rng(1);
  for (std::size_t classes : {1u, 3u, 8u}) {
    const auto cfg = toy(classes);
    const auto m = init_model<float>(cfg, 5);
    std::size_t count = 0;
    for (auto& [n, t] : m.named_parameters()) count += t.numel();
    CHECK(count == parameter_count(cfg));
    CHECK(m.classifier_weight.shape() == ad::Shape{classes, 16});
    CHECK(m.fusion_q.shape() == ad::Shape{1, 16});
    for (float q : m.fusion_q.values()) CHECK(q == 0.0f);
    CHECK(forward(m, images<float>(2, 32, rng), images<float>(2, 32, rng)).shape() == ad::Shape{2, classes});
    CHECK(forward(m, images<float>(1, 32, rng), images<float>(1, 32, rng)).shape() == ad::Shape{1, classes});
  }
  const auto m = init_model<float>(toy(), 5);
  CHECK_THROWS_AS(forward(m, images<float>(1, 32, rng), images<float>(1, 48, rng)), ShapeError);
  ModelConfig bad = toy();
  bad.num_classes = 0;
  CHECK_THROWS_AS(init_model<float>(bad, 1), ConfigError);
}

TEST_CASE("model: fixed seed gives identical parameters; streams differ") {
  const auto a = init_model<float>(toy(), 42), b = init_model<float>(toy(), 42), c = init_model<float>(toy(), 43);
  const auto na = a.named_parameters(), nb = b.named_parameters(), nc = c.named_parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(na[i].second.values() == nb[i].second.values());
    any_diff = any_diff || na[i].second.values() != nc[i].second.values();
  }
  CHECK(any_diff);
  CHECK(a.vit_s.patch_weight.values() != a.vit_c.patch_weight.values());
  CHECK(na.front().first.rfind("vit_s.", 0) == 0);
}

TEST_CASE("model: identical stream weights and inputs reduce fusion to one stream") {
  Rng rng(3);
  auto m = init_model<double>(toy(), 7);
  randomize(m, rng, 0.3);
  m.vit_c = m.vit_s;
  const auto img = images<double>(2, 32, rng);
  const auto f_s = vit::vit_forward(img, m.vit_s, m.config.vit);
  const auto fused = fusion::fuse<double>({f_s, vit::vit_forward(img, m.vit_c, m.config.vit)}, m.fusion_q);
  for (std::size_t i = 0; i < fused.numel(); ++i) CHECK(std::abs(fused.values()[i] - f_s.values()[i]) <= 1e-12);
}

TEST_CASE("predict: argmax with lowest-index ties") {
  const std::vector<float> a{0.1f, 0.9f, 0.3f}, tie{0.5f, 0.5f};
  CHECK(argmax(std::span<const float>(a)) == 1);
  CHECK(argmax(std::span<const float>(tie)) == 0);
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> l(5), shifted(5);
    const double k = rng.uniform(-10, 10);
    for (std::size_t i = 0; i < 5; ++i) {
      l[i] = std::round(rng.uniform(-3, 3));
      shifted[i] = l[i] + k;
    }
    CHECK(argmax(std::span<const double>(l)) == argmax(std::span<const double>(shifted)));
  }
  CHECK_THROWS_AS(argmax(std::span<const float>()), InvalidArgument);
}

TEST_CASE("model: save and load reproduce logits bit for bit") {
  Rng rng(8);
  auto m = init_model<float>(toy(), 9);
  randomize(m, rng, 0.2);
  const auto dir = oracle::scratch_dir("model_io");
  save_model(m, dir / "m.mdck");
  const auto loaded = load_model<float>(toy(), dir / "m.mdck");
  const auto is = images<float>(3, 32, rng), ic = images<float>(3, 32, rng);
  CHECK(forward(m, is, ic).values() == forward(loaded, is, ic).values());
  CHECK(predict(m, is, ic) == predict(loaded, is, ic));
}

TEST_CASE("model: checkpoint name and shape errors") {
  const auto m = init_model<float>(toy(), 9);
  auto entries = export_parameters(m);
  const auto dir = oracle::scratch_dir("model_err");

  auto without_q = entries;
  std::erase_if(without_q, [](const ad::NamedArray& e) { return e.name == "fusion.q"; });
  ad::save_checkpoint(without_q, dir / "noq.mdck");
  try {
    load_model<float>(toy(), dir / "noq.mdck");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("fusion.q") != std::string::npos);
  }

  auto extra = entries;
  extra.push_back({"bogus.weight", {1}, {0.0f}});
  ad::save_checkpoint(extra, dir / "extra.mdck");
  try {
    load_model<float>(toy(), dir / "extra.mdck");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bogus.weight") != std::string::npos);
  }

  save_model(init_model<float>(toy(5), 1), dir / "five.mdck");
  CHECK_THROWS_AS(load_model<float>(toy(3), dir / "five.mdck"), ShapeError);
}

TEST_CASE("model: full toy gradient check over every parameter") {
  Rng rng(13);
  auto m = init_model<double>(toy(), 17);
  randomize(m, rng, 0.3);
  const auto is = images<double>(2, 32, rng), ic = images<double>(2, 32, rng);
  const std::vector<std::size_t> labels{2, 0};
  const auto rep = ad::grad_check(
      [&] { return ad::cross_entropy_logits(forward(m, is, ic), std::span<const std::size_t>(labels)); },
      m.parameters());
  INFO("max rel error " << rep.max_rel_error << " input " << rep.worst_input << " index " << rep.worst_index);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error <= 1e-4);
  CHECK(rep.coordinates == parameter_count(toy()));
}
