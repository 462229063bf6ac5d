#include <cmath>

#include "doctest.h"
#include "mmat/errors.hpp"
#include "mmat/tensor.hpp"
#include "test_helpers.hpp"

using namespace mmat;
using namespace mmat::grad;

TEST_CASE("matmul hand cases") {
  const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor col = Tensor::matrix({{3}, {4}});
  const Tensor r = matmul(id, col);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r[0] == 3.0);
  CHECK(r[1] == 4.0);
  CHECK(matmul(Tensor::matrix({{1, 2}}), col).item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  const Tensor a = testutil::random_tensor({3, 3}, 11);
  const Tensor b = testutil::random_tensor({3, 3}, 12);
  CHECK(finite_diff_check([&](const Tensor& x) { return sum(matmul(x, b)); }, a) <= 1e-6);
  CHECK(finite_diff_check([&](const Tensor& x) { return sum(matmul(a, x)); }, b) <= 1e-6);
}

TEST_CASE("matmul agrees with a plain triple loop") {
  const Tensor a = testutil::random_tensor({4, 5}, 1);
  const Tensor b = testutil::random_tensor({5, 3}, 2);
  const auto ref = testutil::matmul_ref({a.data().begin(), a.data().end()},
                                        {b.data().begin(), b.data().end()}, 4, 5, 3);
  const Tensor r = matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(r[i] == doctest::Approx(ref[i]).epsilon(1e-14));
}

TEST_CASE("elementwise ops") {
  const Tensor r = relu(Tensor::vector({-1, 0, 2}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  Tensor x = Tensor::vector({0.5, -1.5, 2.0});
  x.set_requires_grad();
  const Tensor z = add(x, neg(x));
  for (double v : z.data()) CHECK(v == 0.0);
  sum(z).backward();
  for (double g : x.grad()) CHECK(g == 0.0);

  const Tensor p = Tensor::vector({0.5, 1.0, 2.0});
  const Tensor rt = log(exp(p));
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(rt[i] - p[i]) <= 1e-12);

  CHECK_THROWS_AS(log(Tensor::vector({1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log(Tensor::vector({-2.0})), DomainError);
}

TEST_CASE("relu derivative at zero is zero") {
  Tensor x = Tensor::vector({0.0, 1.0, -1.0});
  x.set_requires_grad();
  sum(relu(x)).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("scalar broadcast in add and mul") {
  Tensor x = Tensor::vector({1, 2, 3});
  Tensor s = Tensor::scalar(2.0);
  x.set_requires_grad();
  s.set_requires_grad();
  const Tensor y = mul(x, s);
  CHECK(y[2] == 6.0);
  sum(y).backward();
  CHECK(s.grad()[0] == 6.0);
  CHECK(x.grad()[1] == 2.0);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::vector({1, 2, 3});
  x.set_requires_grad();
  const Tensor root = sum(scale(x, 2.0));
  root.backward();
  for (double g : x.grad()) CHECK(g == 2.0);

  SUBCASE("second backward accumulates") {
    root.backward();
    for (double g : x.grad()) CHECK(g == 4.0);
  }
  SUBCASE("zero_grad resets") {
    x.zero_grad();
    root.backward();
    for (double g : x.grad()) CHECK(g == 2.0);
  }
  SUBCASE("non-scalar root") {
    CHECK_THROWS_AS(scale(x, 2.0).backward(), ContractError);
  }
}

TEST_CASE("tensor consumed twice receives both contributions") {
  Tensor x = Tensor::vector({1.5, -0.5});
  x.set_requires_grad();
  sum(add(mul(x, x), scale(x, 3.0))).backward();
  CHECK(x.grad()[0] == doctest::Approx(2 * 1.5 + 3));
  CHECK(x.grad()[1] == doctest::Approx(2 * -0.5 + 3));
}

TEST_CASE("CE through softmax has gradient p - onehot") {
  Tensor z = Tensor::matrix({{0.3, -1.2, 2.0}});
  z.set_requires_grad();
  const std::size_t y[] = {1};
  const Tensor lp = log_softmax_rows(z);
  neg(mean(pick(lp, y))).backward();
  const Tensor p = softmax_rows(z.detach());
  for (std::size_t k = 0; k < 3; ++k) {
    const double expect = p[k] - (k == 1 ? 1.0 : 0.0);
    CHECK(z.grad()[k] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(finite_diff_check([&](const Tensor& t) { return neg(mean(pick(log_softmax_rows(t), y))); },
                          z.detach().clone()) <= 1e-6);
}

TEST_CASE("finite_diff_check examples") {
  const Tensor x = Tensor::vector({1, 2});
  CHECK(finite_diff_check([](const Tensor& t) { return sum(square(t)); }, x) <= 1e-8);
  CHECK(finite_diff_check([](const Tensor&) { return Tensor::scalar(3.0); }, x) == 0.0);
}

TEST_CASE("composed expressions pass gradient checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor a = testutil::random_tensor({4, 6}, 100 + seed);
    const Tensor w = testutil::random_tensor({6, 3}, 200 + seed);
    const Tensor b = testutil::random_tensor({3}, 300 + seed);
    auto f = [&](const Tensor& x) {
      const Tensor h = add_rowvec(matmul(x, w), b);
      const Tensor sm = softmax_rows(h);
      return add(mean(square(h)), sum(log(add_scalar(sm, 0.5))));
    };
    CHECK(finite_diff_check(f, a) <= 1e-5);
  }
}

TEST_CASE("softmax rows are normalized and stable") {
  const Tensor p = softmax_rows(Tensor::matrix({{0, 0}, {1000, 0}, {1, 2}}));
  CHECK(p.at(0, 0) == 0.5);
  CHECK(p.at(1, 0) == doctest::Approx(1.0));
  CHECK(p.at(1, 1) >= 0.0);
  for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(p.at(r, 0) + p.at(r, 1) - 1.0) <= 1e-12);
  CHECK_THROWS_AS(softmax_rows(Tensor::matrix({{std::nan(""), 0.0}})), NumericError);
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Tensor x = testutil::random_tensor({3, 4}, 5);
    x.set_requires_grad();
    const Tensor w = testutil::random_tensor({4, 2}, 6);
    sum(softmax_rows(relu(matmul(x, w)))).backward();
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad();
  Tensor y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = scale(x, 3.0);
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("construction checks") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
  CHECK_THROWS_AS(Tensor::matrix({{1, 2}, {3}}), DimensionError);
  CHECK(Tensor::zeros({2, 3}).size() == 6);
  CHECK(Tensor::scalar(4).item() == 4.0);
}
