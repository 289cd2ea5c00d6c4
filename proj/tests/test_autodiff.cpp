#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mdgait/checkpoint.hpp"
#include "mdgait/error.hpp"
#include "mdgait/rng.hpp"
#include "mdgait/tensor.hpp"
#include "oracles.hpp"

using namespace mdgait;
using namespace mdgait::ad;
using T = Tensor<double>;

namespace {

T rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T::from_data(std::move(shape), std::move(v), true);
}

// Weighted sum with fixed random weights, so every output coordinate matters.
T probe(const T& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(hadamard(y, T::from_data(y.shape(), w)));
}

void expect_grads(const std::function<T()>& f, const std::vector<T>& inputs) {
  const auto rep = grad_check(f, inputs);
  INFO("max rel error " << rep.max_rel_error << " at input " << rep.worst_input << " index " << rep.worst_index);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error <= 1e-4);
  CHECK(rep.coordinates > 0);
}

}  // namespace

TEST_CASE("tensor: construction, shapes and errors") {
  const auto z = T::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  CHECK(to_string(z.shape()) == "[2, 3]");
  CHECK(T::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(T::from_data({2, 2}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(z.item(), ShapeError);
  CHECK_THROWS_AS(matmul(T::zeros({2, 3}), T::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(add(T::zeros({2, 3}), T::zeros({2})), ShapeError);
  CHECK_THROWS_AS(softmax(T::zeros({2, 3}), 2), ShapeError);
  CHECK_THROWS_AS(reshape(T::zeros({2, 3}), {5}), ShapeError);
  CHECK_THROWS_AS(slice(T::zeros({2, 3}), 1, 2, 2), ShapeError);
  CHECK_THROWS_AS(concat<double>({T::zeros({2, 3}), T::zeros({3, 2})}, 0), ShapeError);
}

TEST_CASE("tensor: forward values of elementary ops") {
  const auto a = T::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto b = T::from_data({3, 2}, {1, 0, 0, 1, 1, 1});
  CHECK(matmul(a, b).values() == std::vector<double>{4, 5, 10, 11});
  CHECK(add(a, T::from_data({3}, {10, 20, 30})).values() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(transpose(a, 0, 1).values() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(slice(a, 1, 1, 2).values() == std::vector<double>{2, 3, 5, 6});
  CHECK(concat<double>({a, a}, 1).shape() == Shape{2, 6});
  CHECK(broadcast_to(T::from_data({1, 3}, {1, 2, 3}), {2, 2, 3}).values() ==
        std::vector<double>{1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
  CHECK(sum(a).item() == 21.0);
  CHECK(mean(a).item() == 3.5);
  // weight [out, in]
  const auto w = T::from_data({2, 3}, {1, 0, 0, 0, 1, 1});
  CHECK(linear(a, w, T::from_data({2}, {0.5, -1})).values() == std::vector<double>{1.5, 4, 4.5, 10});
  CHECK_THROWS_AS(linear(a, T::zeros({3, 2}), T::zeros({2})), ShapeError);
  const auto s = softmax(T::from_data({1, 3}, {1000.0, 1000.0, 1000.0}), 1);
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("layer_norm: [1, 2, 3] with unit gain and zero bias") {
  const auto x = T::from_data({1, 3}, {1, 2, 3});
  const auto y = layer_norm(x, T::full({3}, 1.0), T::zeros({3}), 0.0);
  const double s = std::sqrt(2.0 / 3.0);
  CHECK(y.values()[0] == doctest::Approx(-1.0 / s).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(0.0));
  CHECK(y.values()[2] == doctest::Approx(1.0 / s).epsilon(1e-12));
}

TEST_CASE("gelu: exact erf form") {
  const auto y = gelu(T::from_data({4}, {-2.0, 0.0, 0.5, 3.0}));
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = std::vector<double>{-2.0, 0.0, 0.5, 3.0}[i];
    CHECK(y.values()[i] == doctest::Approx(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)))).epsilon(1e-14));
  }
}

TEST_CASE("cross_entropy_logits: matches the naive definition") {
  Rng rng(4);
  const auto logits = rand_tensor({5, 4}, rng, -3, 3);
  const std::vector<std::size_t> labels{0, 3, 1, 1, 2};
  double ref = 0.0;
  for (std::size_t b = 0; b < 5; ++b) {
    double z = 0.0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits.values()[b * 4 + c]);
    ref += -std::log(std::exp(logits.values()[b * 4 + labels[b]]) / z);
  }
  CHECK(cross_entropy_logits(logits, labels).item() == doctest::Approx(ref / 5).epsilon(1e-12));
  const auto big = T::from_data({1, 2}, {1e4, 0.0});
  const std::vector<std::size_t> one{1};
  CHECK(cross_entropy_logits(big, one).item() == doctest::Approx(1e4));
  const std::vector<std::size_t> bad{4, 0, 0, 0, 0};
  CHECK_THROWS_AS(cross_entropy_logits(logits, bad), InvalidArgument);
}

TEST_CASE("gradients: every op passes a central-difference check in f64") {
  Rng rng(11);
  SUBCASE("matmul shared") {
    auto a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({4, 5}, rng);
    expect_grads([&] { return probe(matmul(a, b)); }, {a, b});
  }
  SUBCASE("matmul batched") {
    auto a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({2, 4, 2}, rng);
    expect_grads([&] { return probe(matmul(a, b)); }, {a, b});
  }
  SUBCASE("mean of matmul") {
    auto x = rand_tensor({3, 4}, rng), w = rand_tensor({4, 2}, rng);
    expect_grads([&] { return mean(matmul(x, w)); }, {x, w});
  }
  SUBCASE("add, sub, hadamard with broadcasting") {
    auto a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({4}, rng), c = rand_tensor({1, 3, 4}, rng);
    expect_grads([&] { return probe(hadamard(sub(add(a, b), c), c)); }, {a, b, c});
  }
  SUBCASE("scale") {
    auto a = rand_tensor({3, 2}, rng);
    expect_grads([&] { return probe(scale(a, -2.5)); }, {a});
  }
  SUBCASE("softmax on each axis") {
    auto a = rand_tensor({2, 3, 4}, rng, -2, 2);
    for (std::size_t axis = 0; axis < 3; ++axis) expect_grads([&] { return probe(softmax(a, axis)); }, {a});
  }
  SUBCASE("layer_norm") {
    auto a = rand_tensor({3, 6}, rng, -2, 2), g = rand_tensor({6}, rng), b = rand_tensor({6}, rng);
    expect_grads([&] { return probe(layer_norm(a, g, b, 1e-6)); }, {a, g, b});
  }
  SUBCASE("gelu") {
    auto a = rand_tensor({10}, rng, -3, 3);
    expect_grads([&] { return probe(gelu(a)); }, {a});
  }
  SUBCASE("linear") {
    auto a = rand_tensor({2, 3, 4}, rng), w = rand_tensor({5, 4}, rng), b = rand_tensor({5}, rng);
    expect_grads([&] { return probe(linear(a, w, b)); }, {a, w, b});
  }
  SUBCASE("transpose") {
    auto a = rand_tensor({2, 3, 4, 5}, rng);
    expect_grads([&] { return probe(transpose(a, 1, 3)); }, {a});
  }
  SUBCASE("reshape") {
    auto a = rand_tensor({2, 6}, rng);
    expect_grads([&] { return probe(reshape(a, {3, 4})); }, {a});
  }
  SUBCASE("concat and slice") {
    auto a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 2}, rng);
    expect_grads([&] { return probe(slice(concat<double>({a, b}, 1), 1, 1, 3)); }, {a, b});
  }
  SUBCASE("broadcast_to") {
    auto a = rand_tensor({1, 3}, rng);
    expect_grads([&] { return probe(broadcast_to(a, {2, 4, 3})); }, {a});
  }
  SUBCASE("sum and mean") {
    auto a = rand_tensor({2, 3}, rng);
    expect_grads([&] { return add(sum(hadamard(a, a)), mean(a)); }, {a});
  }
  SUBCASE("cross entropy") {
    auto a = rand_tensor({4, 3}, rng, -2, 2);
    const std::vector<std::size_t> labels{2, 0, 1, 2};
    expect_grads([&] { return cross_entropy_logits(a, labels); }, {a});
  }
}

TEST_CASE("backward: accumulation, reuse and no-grad") {
  auto x = T::from_data({2}, {1.5, -2.0}, true);
  backward(sum(hadamard(x, x)));
  CHECK(x.grad()[0] == 3.0);
  CHECK(x.grad()[1] == -4.0);
  backward(sum(x));
  CHECK(x.grad()[0] == 4.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());

  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const auto y = sum(hadamard(x, x));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
  CHECK_THROWS_AS(backward(T::zeros({2}, true)), InvalidArgument);
  CHECK_THROWS_AS(backward(T::scalar(1.0)), InvalidArgument);

  // Diamond: x feeds two branches that meet again.
  auto a = T::from_data({1}, {2.0}, true);
  const auto b = scale(a, 3.0);
  backward(sum(add(hadamard(b, a), b)));
  CHECK(a.grad()[0] == doctest::Approx(6.0 * 2.0 + 3.0));
}

TEST_CASE("grad_check: detects a deliberately wrong backward") {
  Rng rng(8);
  auto a = rand_tensor({6}, rng, -2, 2);
  // GELU forward paired with the derivative of x * Phi(x) missing its density term.
  auto bad_gelu = [](const T& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = x.values()[i];
      out[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    return T::make_result(x.shape(), std::move(out), {x}, [](T::Node& self) {
      auto& src = *self.parents[0];
      auto& g = src.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = src.data[i];
        g[i] += self.grad[i] * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
      }
    });
  };
  const auto rep = grad_check([&] { return probe(bad_gelu(a)); }, {a});
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_rel_error > 1e-2);
  CHECK(grad_check([&] { return probe(gelu(a)); }, {a}).passed);
}

TEST_CASE("checkpoint: round trip and malformed files") {
  std::vector<NamedArray> entries{{"a.weight", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"b", {}, {7.5f}}};
  const auto bytes = encode_checkpoint(entries);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MDCK");
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a.weight");
  CHECK(back[0].shape == Shape{2, 3});
  CHECK(back[0].data == entries[0].data);
  CHECK(back[1].data == entries[1].data);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(version), FormatError);
  auto trailing = bytes;
  trailing.push_back(1);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);

  const auto dir = oracle::scratch_dir("checkpoint");
  save_checkpoint(entries, dir / "m.mdck");
  CHECK(load_checkpoint(dir / "m.mdck")[0].data == entries[0].data);
}
