#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "eegc/autograd.hpp"
#include "support/testsupport.hpp"

using namespace eegc::ag;
namespace ts = testsupport;

namespace {

TensorPtr randn(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  auto t = Tensor::leaf(std::move(shape), requires_grad);
  for (auto& v : t->value) v = dist(rng);
  return t;
}

// scalar probe: weighted sum with fixed pseudo-random weights so every
// element of an op output reaches the loss
TensorPtr probe(const TensorPtr& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  auto w = Tensor::leaf(x->shape, false);
  for (auto& v : w->value) v = dist(rng);
  return sum_all(mul(x, w));
}

}  // namespace

TEST_CASE("matmul forward") {
  SUBCASE("identity") {
    auto eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from_values({2, 2}, {3.5, -2, 0.25, 7});
    auto c = matmul(eye, m);
    for (size_t i = 0; i < 4; ++i) CHECK(c->value[i] == m->value[i]);
  }
  SUBCASE("hand multiplication") {
    auto a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from_values({2, 1}, {0, 1});
    auto c = matmul(a, b);
    CHECK(c->value[0] == doctest::Approx(2.0));
    CHECK(c->value[1] == doctest::Approx(4.0));
  }
  SUBCASE("batched against per-item products") {
    std::mt19937_64 rng(1);
    auto a = randn({3, 4, 5}, rng, false);
    auto b = randn({3, 5, 2}, rng, false);
    auto c = matmul(a, b);
    REQUIRE(c->shape == Shape{3, 4, 2});
    for (int i = 0; i < 3; ++i) {
      auto ai = Tensor::from_values(
          {4, 5}, {a->value.begin() + i * 20, a->value.begin() + (i + 1) * 20});
      auto bi = Tensor::from_values(
          {5, 2}, {b->value.begin() + i * 10, b->value.begin() + (i + 1) * 10});
      auto ci = matmul(ai, bi);
      for (int j = 0; j < 8; ++j)
        CHECK(c->value[static_cast<size_t>(i * 8 + j)] ==
              doctest::Approx(ci->value[static_cast<size_t>(j)]).epsilon(1e-14));
    }
  }
  SUBCASE("shared right operand equals flattening") {
    std::mt19937_64 rng(2);
    auto a = randn({2, 3, 4}, rng, false);
    auto b = randn({4, 6}, rng, false);
    auto c = matmul(a, b);
    auto flat = matmul(reshape(a, {6, 4}), b);
    REQUIRE(c->shape == Shape{2, 3, 6});
    for (size_t i = 0; i < c->value.size(); ++i)
      CHECK(c->value[i] == flat->value[i]);
  }
  SUBCASE("shape mismatch") {
    auto a = Tensor::leaf({2, 3});
    auto b = Tensor::leaf({4, 2});
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
  }
}

TEST_CASE("softmax_rows") {
  SUBCASE("uniform on a constant row") {
    auto x = Tensor::from_values({1, 4}, {0, 0, 0, 0});
    auto y = softmax_rows(x);
    for (double v : y->value) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("closed form for [0, ln 3]") {
    auto x = Tensor::from_values({1, 2}, {0.0, std::log(3.0)});
    auto y = softmax_rows(x);
    CHECK(y->value[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y->value[1] == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("shift invariance") {
    std::mt19937_64 rng(3);
    auto x = randn({5, 8}, rng, false);
    auto y = softmax_rows(x);
    auto shifted = Tensor::leaf({5, 8});
    for (size_t i = 0; i < x->value.size(); ++i)
      shifted->value[i] = x->value[i] + 123.456;
    auto y2 = softmax_rows(shifted);
    for (size_t i = 0; i < y->value.size(); ++i)
      CHECK(std::abs(y->value[i] - y2->value[i]) < 1e-12);
  }
  SUBCASE("rows sum to one, entries in [0,1]") {
    std::mt19937_64 rng(4);
    auto x = randn({40, 16}, rng, false, 30.0);
    auto y = softmax_rows(x);
    for (int r = 0; r < 40; ++r) {
      double sum = 0.0;
      for (int j = 0; j < 16; ++j) {
        const double v = y->value[static_cast<size_t>(r * 16 + j)];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("tanh op") {
  auto x = Tensor::from_values({1, 3}, {0.0, 3.0, -3.0});
  auto y = tanh(x);
  CHECK(y->value[0] == 0.0);
  CHECK(y->value[1] < 1.0);
  CHECK(y->value[1] == doctest::Approx(std::tanh(3.0)));
  CHECK(y->value[2] > -1.0);
  CHECK(y->value[2] == doctest::Approx(-std::tanh(3.0)));
  // saturated inputs still stay inside the closed interval
  auto big = tanh(Tensor::from_values({2}, {100.0, -100.0}));
  CHECK(std::abs(big->value[0]) <= 1.0);
  CHECK(std::abs(big->value[1]) <= 1.0);
}

TEST_CASE("layer_norm forward") {
  auto gain = Tensor::full({2}, 1.0);
  auto bias = Tensor::full({2}, 0.0);
  SUBCASE("constant row collapses to the bias") {
    auto x = Tensor::from_values({1, 2}, {5.0, 5.0});
    auto y = layer_norm(x, gain, bias, 1e-5);
    CHECK(y->value[0] == doctest::Approx(0.0));
    CHECK(y->value[1] == doctest::Approx(0.0));
  }
  SUBCASE("unit-variance row is a fixed point as eps vanishes") {
    auto x = Tensor::from_values({1, 2}, {1.0, -1.0});
    auto y = layer_norm(x, gain, bias, 1e-12);
    CHECK(y->value[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(y->value[1] == doctest::Approx(-1.0).epsilon(1e-9));
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones") {
    std::mt19937_64 rng(5);
    auto w = randn({3, 4}, rng);
    backward(sum_all(w));
    for (double g : w->grad) CHECK(g == doctest::Approx(1.0));
  }
  SUBCASE("mean squared error hand gradient") {
    auto w = Tensor::from_values({1, 4}, {1.0, 2.0, 3.0, 4.0}, true);
    auto t = Tensor::from_values({1, 4}, {0.0, 0.0, 0.0, 0.0});
    auto ones = Tensor::full({1, 4}, 1.0);
    backward(weighted_mean_loss(w, t, ones));
    for (size_t i = 0; i < 4; ++i)
      CHECK(w->grad[i] ==
            doctest::Approx(2.0 * w->value[i] / 4.0).epsilon(1e-12));
  }
  SUBCASE("repeated backward accumulates") {
    auto w = Tensor::from_values({2}, {1.0, 2.0}, true);
    auto loss = sum_all(w);
    backward(loss);
    backward(loss);
    for (double g : w->grad) CHECK(g == doctest::Approx(2.0));
  }
  SUBCASE("non-scalar loss rejected") {
    auto w = Tensor::leaf({2, 2}, true);
    CHECK_THROWS_AS(backward(w), std::invalid_argument);
  }
  SUBCASE("shared subexpression accumulates like a duplicated one") {
    auto x1 = Tensor::from_values({3}, {0.3, -0.7, 1.1}, true);
    auto s = tanh(x1);
    backward(sum_all(add(s, s)));

    auto x2 = Tensor::from_values({3}, {0.3, -0.7, 1.1}, true);
    backward(sum_all(add(tanh(x2), tanh(x2))));

    // the duplicated graph builds tanh twice; gradients must agree
    for (size_t i = 0; i < 3; ++i)
      CHECK(x1->grad[i] == doctest::Approx(x2->grad[i]).epsilon(1e-15));
  }
  SUBCASE("graph trace visits each node once") {
    auto x = Tensor::from_values({2}, {1.0, 2.0}, true);
    auto s = tanh(x);
    auto loss = sum_all(add(s, s));  // diamond
    auto g = Graph::trace(loss);
    CHECK(g.nodes.size() == 4);  // x, tanh, add, sum
  }
  SUBCASE("free-graph mode still produces leaf gradients") {
    std::mt19937_64 rng(6);
    auto w = randn({4, 4}, rng);
    auto x = randn({4, 4}, rng, false);
    auto loss1 = mean_all(tanh(matmul(x, w)));
    backward(loss1);
    auto expected = w->grad;
    w->zero_grad();
    auto loss2 = mean_all(tanh(matmul(x, w)));
    backward(loss2, FreeGraph::Yes);
    for (size_t i = 0; i < expected.size(); ++i)
      CHECK(w->grad[i] == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(loss2->value.empty());  // interior storage released
  }
}

TEST_CASE("finite-difference checks per op") {
  std::mt19937_64 rng(7);

  SUBCASE("matmul 2d") {
    auto a = randn({3, 4}, rng);
    auto b = randn({4, 5}, rng);
    auto check = ts::check_gradients([&] { return probe(matmul(a, b)); },
                                     {{"a", a}, {"b", b}});
    CAPTURE(check.worst);
    CHECK(check.ok);
  }
  SUBCASE("matmul batched") {
    auto a = randn({2, 3, 4}, rng);
    auto b = randn({2, 4, 3}, rng);
    auto check = ts::check_gradients([&] { return probe(matmul(a, b)); },
                                     {{"a", a}, {"b", b}});
    CHECK(check.ok);
  }
  SUBCASE("matmul_scaled and transpose") {
    auto a = randn({3, 4}, rng);
    auto b = randn({3, 4}, rng);
    auto check = ts::check_gradients(
        [&] { return probe(matmul_scaled(a, transpose_last2(b), 0.37)); },
        {{"a", a}, {"b", b}});
    CHECK(check.ok);
  }
  SUBCASE("softmax") {
    auto x = randn({4, 6}, rng);
    auto check = ts::check_gradients([&] { return probe(softmax_rows(x)); },
                                     {{"x", x}});
    CHECK(check.ok);
  }
  SUBCASE("tanh gradient at zero is one") {
    auto x = Tensor::from_values({1}, {0.0}, true);
    backward(sum_all(tanh(x)));
    CHECK(x->grad[0] == doctest::Approx(1.0).epsilon(1e-12));
    auto check =
        ts::check_gradients([&] { return sum_all(tanh(x)); }, {{"x", x}});
    CHECK(check.ok);
  }
  SUBCASE("layer_norm") {
    auto x = randn({3, 8}, rng);
    auto g = randn({8}, rng);
    auto b = randn({8}, rng);
    auto check = ts::check_gradients(
        [&] { return probe(layer_norm(x, g, b, 1e-5)); },
        {{"x", x}, {"g", g}, {"b", b}}, 1e-4, 1e-4);
    CAPTURE(check.worst);
    CHECK(check.ok);
  }
  SUBCASE("add sub mul scale") {
    auto a = randn({3, 5}, rng);
    auto b = randn({3, 5}, rng);
    auto v = randn({5}, rng);
    auto check = ts::check_gradients(
        [&] {
          return probe(add(scale(mul(a, b), 1.7), add(sub(a, b), v)));
        },
        {{"a", a}, {"b", b}, {"v", v}});
    CHECK(check.ok);
  }
  SUBCASE("concat and reshape") {
    auto a = randn({2, 3, 2}, rng);
    auto b = randn({2, 3, 4}, rng);
    auto check = ts::check_gradients(
        [&] { return probe(reshape(concat_last({a, b}), {6, 6})); },
        {{"a", a}, {"b", b}});
    CHECK(check.ok);
  }
  SUBCASE("select_by_mask routes gradients by the mask") {
    auto m = Tensor::from_values({6}, {1, 0, 1, 0, 0, 1});
    auto a = randn({6}, rng);
    auto b = randn({6}, rng);
    auto check = ts::check_gradients(
        [&] { return probe(select_by_mask(m, a, b)); }, {{"a", a}, {"b", b}});
    CHECK(check.ok);
    a->zero_grad();
    b->zero_grad();
    backward(sum_all(select_by_mask(m, a, b)));
    for (size_t i = 0; i < 6; ++i) {
      CHECK(a->grad[i] == (m->value[i] != 0.0 ? 1.0 : 0.0));
      CHECK(b->grad[i] == (m->value[i] != 0.0 ? 0.0 : 1.0));
    }
  }
  SUBCASE("weighted_mean_loss, both kernels") {
    auto p = randn({3, 4}, rng);
    auto t = randn({3, 4}, rng, false);
    auto w = Tensor::leaf({3, 4});
    std::uniform_real_distribution<double> wd(0.5, 3.0);
    for (auto& v : w->value) v = wd(rng);
    auto mse = ts::check_gradients(
        [&] { return weighted_mean_loss(p, t, w, LossKernel::SquaredError); },
        {{"p", p}});
    CHECK(mse.ok);
    auto l1 = ts::check_gradients(
        [&] { return weighted_mean_loss(p, t, w, LossKernel::AbsoluteError); },
        {{"p", p}});
    CHECK(l1.ok);
  }
  SUBCASE("random three-layer composite") {
    auto w1 = randn({6, 8}, rng, true, 0.5);
    auto w2 = randn({8, 8}, rng, true, 0.5);
    auto w3 = randn({8, 4}, rng, true, 0.5);
    auto g = randn({8}, rng);
    auto b = randn({8}, rng);
    auto x = randn({5, 6}, rng, false);
    auto builder = [&] {
      auto h1 = tanh(matmul(x, w1));
      auto h2 = layer_norm(matmul(h1, w2), g, b, 1e-5);
      return probe(matmul(softmax_rows(h2), w3));
    };
    auto check = ts::check_gradients(
        builder, {{"w1", w1}, {"w2", w2}, {"w3", w3}, {"g", g}, {"b", b}});
    CAPTURE(check.worst);
    CAPTURE(check.max_rel_err);
    CHECK(check.ok);
  }
}

TEST_CASE("no-grad mode skips graph recording") {
  std::mt19937_64 rng(8);
  auto w = randn({4, 4}, rng);
  NoGradGuard guard;
  auto y = matmul(w, w);
  CHECK(y->is_leaf());
  CHECK_FALSE(y->requires_grad);
}
