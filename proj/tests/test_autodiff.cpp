#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "iclbench/autodiff.hpp"
#include "support.hpp"

using namespace iclbench;
using testing::gradient_error;
using testing::project;
using testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

Tensor<double> values(Shape shape, std::vector<double> v) { return Tensor<double>(std::move(shape), std::move(v)); }

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  ad::Tape<double> t;
  const auto y = ad::softmax(t.constant(values({3}, {0, 0, 0})));
  for (double v : y.value().data()) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("relu and square on scalars") {
  ad::Tape<double> t;
  CHECK(ad::relu(t.constant(Tensor<double>::scalar(-2))).value().item() == 0.0);
  CHECK(ad::square(ad::relu(t.constant(Tensor<double>::scalar(2)))).value().item() == 4.0);
}

TEST_CASE("matmul with an identity-padded operand reproduces the input block") {
  ad::Tape<double> t;
  const auto a = t.constant(values({2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto eye = t.constant(values({3, 2}, {1, 0, 0, 1, 0, 0}));
  const auto c = ad::matmul(a, eye);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.value().storage() == std::vector<double>{1, 2, 4, 5});
}

TEST_CASE("gradient of sum(w * w) is 2w") {
  ad::Tape<double> t;
  const auto w = t.parameter(0, values({2}, {1, 2}));
  const auto g = t.backward(ad::sum(ad::mul(w, w)));
  REQUIRE(g.size() == 1);
  CHECK(g.grads[0].storage() == std::vector<double>{2, 4});
}

TEST_CASE("every primitive passes central finite differences in 64-bit") {
  RngStream rng(1, "fd");
  auto r = [&](Shape s, double scale = 1.0, double offset = 0.0) { return random_tensor(s, rng, scale, offset); };

  SUBCASE("matmul shared right operand") {
    CHECK(gradient_error({r({2, 3, 4}), r({4, 5})}, [](auto& t, const auto& x) {
            return project(t, ad::matmul(x[0], x[1]));
          }) < kTol);
  }
  SUBCASE("matmul batched") {
    CHECK(gradient_error({r({2, 3, 4}), r({2, 4, 2})}, [](auto& t, const auto& x) {
            return project(t, ad::matmul(x[0], x[1]));
          }) < kTol);
  }
  SUBCASE("add / sub / mul with broadcasting") {
    for (int op = 0; op < 3; ++op) {
      CHECK(gradient_error({r({2, 3, 4}), r({4})}, [op](auto& t, const auto& x) {
              auto y = op == 0 ? ad::add(x[0], x[1]) : op == 1 ? ad::sub(x[0], x[1]) : ad::mul(x[0], x[1]);
              return project(t, y);
            }) < kTol);
      CHECK(gradient_error({r({3, 4}), r({2, 3, 4})}, [op](auto& t, const auto& x) {
              auto y = op == 0 ? ad::add(x[0], x[1]) : op == 1 ? ad::sub(x[0], x[1]) : ad::mul(x[0], x[1]);
              return project(t, y);
            }) < kTol);
      CHECK(gradient_error({r({2, 5}), r({2, 5})}, [op](auto& t, const auto& x) {
              auto y = op == 0 ? ad::add(x[0], x[1]) : op == 1 ? ad::sub(x[0], x[1]) : ad::mul(x[0], x[1]);
              return project(t, y);
            }) < kTol);
    }
  }
  SUBCASE("scalar ops") {
    CHECK(gradient_error({r({3, 3})}, [](auto& t, const auto& x) {
            return project(t, ad::add_scalar(ad::scale(x[0], 1.7), -0.3));
          }) < kTol);
  }
  SUBCASE("relu away from the kink") {
    auto x = r({4, 5});
    for (auto& v : x.data()) v += v > 0 ? 0.1 : -0.1;
    CHECK(gradient_error({x}, [](auto& t, const auto& x) { return project(t, ad::relu(x[0])); }) < kTol);
  }
  SUBCASE("square, exp, gelu") {
    CHECK(gradient_error({r({4, 5})}, [](auto& t, const auto& x) { return project(t, ad::square(x[0])); }) < kTol);
    CHECK(gradient_error({r({4, 5})}, [](auto& t, const auto& x) { return project(t, ad::exp(x[0])); }) < kTol);
    CHECK(gradient_error({r({4, 5}, 2.0)}, [](auto& t, const auto& x) { return project(t, ad::gelu(x[0])); }) < kTol);
  }
  SUBCASE("softmax over the last axis") {
    CHECK(gradient_error({r({3, 6})}, [](auto& t, const auto& x) { return project(t, ad::softmax(x[0])); }) < kTol);
  }
  SUBCASE("layer norm with learned scale and shift") {
    CHECK(gradient_error({r({2, 3, 8}), r({8}, 0.5, 1.0), r({8})}, [](auto& t, const auto& x) {
            return project(t, ad::layer_norm(x[0], x[1], x[2], 1e-5));
          }) < kTol);
  }
  SUBCASE("sum and mean") {
    CHECK(gradient_error({r({3, 4})}, [](auto&, const auto& x) { return ad::sum(ad::square(x[0])); }) < kTol);
    CHECK(gradient_error({r({3, 4})}, [](auto&, const auto& x) { return ad::mean(ad::square(x[0])); }) < kTol);
  }
  SUBCASE("transpose, reshape, concat, slice") {
    CHECK(gradient_error({r({2, 3, 4})}, [](auto& t, const auto& x) {
            return project(t, ad::transpose(x[0], 0, 2));
          }) < kTol);
    CHECK(gradient_error({r({2, 3, 4})}, [](auto& t, const auto& x) {
            return project(t, ad::reshape(x[0], {6, 4}));
          }) < kTol);
    CHECK(gradient_error({r({2, 3}), r({2, 2})}, [](auto& t, const auto& x) {
            const std::vector<ad::Var<double>> parts = {x[0], x[1]};
            return project(t, ad::concat<double>(parts, 1));
          }) < kTol);
    CHECK(gradient_error({r({3, 7, 2})}, [](auto& t, const auto& x) {
            return project(t, ad::slice(x[0], 1, 1, 7, 2));
          }) < kTol);
  }
}

TEST_CASE("backward is linear in the loss") {
  RngStream rng(3, "linearity");
  const auto x = random_tensor({3, 4}, rng);
  auto grads = [&](double a, double b) {
    ad::Tape<double> t;
    const auto p = t.parameter(0, x);
    const auto l1 = ad::sum(ad::exp(p));
    const auto l2 = ad::mean(ad::square(ad::gelu(p)));
    if (b == 0) return t.backward(ad::scale(l1, a)).grads[0];
    if (a == 0) return t.backward(ad::scale(l2, b)).grads[0];
    return t.backward(ad::add(ad::scale(l1, a), ad::scale(l2, b))).grads[0];
  };
  const auto g1 = grads(1, 0), g2 = grads(0, 1), g = grads(2.5, -0.75);
  for (std::size_t i = 0; i < g.numel(); ++i) {
    CHECK(std::abs(g[i] - (2.5 * g1[i] - 0.75 * g2[i])) < 1e-6);
  }
}

TEST_CASE("replaying a tape gives bitwise-identical gradients") {
  RngStream rng(4, "replay");
  const auto x = random_tensor({4, 8}, rng);
  const auto w = random_tensor({8, 3}, rng);
  auto run = [&] {
    ad::Tape<double> t;
    const auto pw = t.parameter(0, w);
    const auto y = ad::gelu(ad::matmul(t.constant(x), pw));
    return t.backward(ad::mean(ad::square(y))).grads[0];
  };
  CHECK(run() == run());
}

TEST_CASE("error contracts") {
  ad::Tape<double> t, other;
  const auto v = t.leaf(values({2}, {1, 2}));
  CHECK_THROWS_AS(t.backward(v), NotScalarError);
  CHECK_THROWS_AS(other.backward(ad::sum(v)), DetachedNodeError);
  CHECK_THROWS_AS(ad::add(v, other.leaf(values({2}, {1, 2}))), DetachedNodeError);
  CHECK_THROWS_AS(ad::add(v, t.leaf(values({3}, {1, 2, 3}))), ShapeMismatchError);
  CHECK_THROWS_AS(ad::matmul(t.leaf(values({2, 3}, {1, 2, 3, 4, 5, 6})), t.leaf(values({2, 2}, {1, 2, 3, 4}))),
                  ShapeMismatchError);
  CHECK_THROWS_AS(ad::exp(t.leaf(values({1}, {1000.0}))), NonFiniteError);
  CHECK_THROWS_AS(ad::scale(v, std::numeric_limits<double>::quiet_NaN()), NonFiniteError);
  CHECK_THROWS_AS(v.value().item(), NotScalarError);
}

TEST_CASE("gradients accumulate at fan-in") {
  ad::Tape<double> t;
  const auto w = t.parameter(0, values({2}, {3, -1}));
  const auto l = ad::add(ad::sum(w), ad::sum(ad::scale(w, 2.0)));
  const auto g = t.backward(l);
  CHECK(g.grads[0].storage() == std::vector<double>{3, 3});
  CHECK(g.global_norm() == doctest::Approx(std::sqrt(18.0)));
}
