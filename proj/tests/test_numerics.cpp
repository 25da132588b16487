#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mnd/numerics.hpp"
#include "oracles.hpp"

using namespace mnd;

TEST_CASE("linear_forward matches hand-computed affine maps", "[numerics]") {
  Matrix identity(2, 2);
  identity(0, 0) = identity(1, 1) = 1.0;
  CHECK(linear_forward(identity, {0.0, 0.0}, {3.0, -1.0}) == Vec{3.0, -1.0});

  Matrix ones(1, 2);
  ones(0, 0) = ones(0, 1) = 1.0;
  CHECK(linear_forward(ones, {0.5}, {1.0, 2.0}) == Vec{3.5});

  Matrix zeros(2, 2);
  CHECK(linear_forward(zeros, {7.0, -7.0}, {123.0, -9.0}) == Vec{7.0, -7.0});
}

TEST_CASE("linear_forward rejects mismatched shapes", "[numerics]") {
  Matrix w(2, 3);
  CHECK_THROWS_AS(linear_forward(w, {0.0, 0.0}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(linear_forward(w, {0.0}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_WITH(linear_forward(w, {0.0, 0.0}, {1.0}),
                    Catch::Matchers::ContainsSubstring("2x3"));
}

TEST_CASE("linear_forward is affine-linear in x", "[numerics]") {
  RngStream rng(7);
  Matrix w(4, 6);
  for (double& v : w.values) v = rng.uniform(-1.0, 1.0);
  Vec b(4);
  for (double& v : b) v = rng.uniform(-1.0, 1.0);

  for (int trial = 0; trial < 20; ++trial) {
    Vec x(6), y(6);
    for (double& v : x) v = rng.uniform(-2.0, 2.0);
    for (double& v : y) v = rng.uniform(-2.0, 2.0);
    double a = rng.uniform(-2.0, 2.0);
    double c = rng.uniform(-2.0, 2.0);

    Vec combo(6);
    for (std::size_t i = 0; i < 6; ++i) combo[i] = a * x[i] + c * y[i];
    Vec lhs = linear_forward(w, b, combo);
    Vec fx = linear_forward(w, b, x);
    Vec fy = linear_forward(w, b, y);
    for (std::size_t i = 0; i < 4; ++i) {
      double rhs = a * fx[i] + c * fy[i] - (a + c - 1.0) * b[i];
      CHECK(std::abs(lhs[i] - rhs) < 1e-9);
    }
  }
}

TEST_CASE("relu clamps negatives", "[numerics]") {
  CHECK(relu({-1.0, 0.0, 2.0}) == Vec{0.0, 0.0, 2.0});
  CHECK(relu({-5.0, -0.1, -1e300}) == Vec{0.0, 0.0, 0.0});
  CHECK(relu({0.5, 1.0, 3.0}) == Vec{0.5, 1.0, 3.0});
}

TEST_CASE("sigmoid values and saturation", "[numerics]") {
  CHECK(sigmoid({0.0}) == Vec{0.5});

  Vec big = sigmoid({1000.0});
  CHECK(big[0] < 1.0);
  CHECK(big[0] > 1.0 - 1e-12);
  CHECK(std::isfinite(big[0]));

  Vec small = sigmoid({-1000.0});
  CHECK(small[0] > 0.0);
  CHECK(small[0] < 1e-12);

  CHECK_THAT(sigmoid({std::log(3.0)})[0], Catch::Matchers::WithinAbs(0.75, 1e-15));
}

TEST_CASE("sigmoid stays in (0,1) and is symmetric", "[numerics]") {
  RngStream rng(11);
  for (int i = 0; i < 200; ++i) {
    double x = rng.uniform(-60.0, 60.0);
    double sp = sigmoid({x})[0];
    double sn = sigmoid({-x})[0];
    CHECK(sp > 0.0);
    CHECK(sp < 1.0);
    CHECK(std::abs(sp + sn - 1.0) < 1e-12);
  }
  for (double x : {-1e308, -750.0, 750.0, 1e308}) {
    double s = sigmoid({x})[0];
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("l2_normalize", "[numerics]") {
  Vec n = l2_normalize({3.0, 4.0});
  CHECK_THAT(n[0], Catch::Matchers::WithinAbs(0.6, 1e-15));
  CHECK_THAT(n[1], Catch::Matchers::WithinAbs(0.8, 1e-15));

  CHECK(l2_normalize({1.0, 0.0}) == Vec{1.0, 0.0});
  CHECK_THROWS_AS(l2_normalize({0.0, 0.0}), std::invalid_argument);

  RngStream rng(3);
  for (int i = 0; i < 20; ++i) {
    Vec x(5);
    for (double& v : x) v = rng.uniform(-4.0, 4.0);
    Vec once = l2_normalize(x);
    Vec twice = l2_normalize(once);
    CHECK(std::abs(l2_norm(once) - 1.0) < 1e-12);
    for (std::size_t j = 0; j < x.size(); ++j) CHECK(std::abs(once[j] - twice[j]) < 1e-12);
  }
}

TEST_CASE("rng streams are deterministic and uniform", "[numerics]") {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(42);
  double first = c.uniform(0.0, 1.0);
  RngStream d(42);
  CHECK(first == d.uniform(0.0, 1.0));

  RngStream e(7);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double v = e.uniform(0.0, 1.0);
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    sum += v;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);

  CHECK_THROWS_AS(e.uniform(1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(e.uniform(2.0, -1.0), std::invalid_argument);
}

TEST_CASE("rng bounded integers cover their range", "[numerics]") {
  RngStream rng(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) counts[static_cast<std::size_t>(rng.next_below(7))] += 1;
  for (int c : counts) CHECK(c > 700);
  CHECK_THROWS_AS(rng.next_below(0), std::invalid_argument);
}

TEST_CASE("finite_diff_grad on known derivatives", "[numerics]") {
  auto square = [](const Vec& x) { return x[0] * x[0]; };
  Vec g = finite_diff_grad(square, {3.0}, 1e-5);
  CHECK_THAT(g[0], Catch::Matchers::WithinAbs(6.0, 1e-6));

  auto constant = [](const Vec&) { return 4.25; };
  CHECK(finite_diff_grad(constant, {1.0, -2.0, 0.5}, 1e-5) == Vec{0.0, 0.0, 0.0});

  auto sumsq = [](const Vec& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
  };
  Vec g2 = finite_diff_grad(sumsq, {1.0, 2.0}, 1e-5);
  CHECK_THAT(g2[0], Catch::Matchers::WithinAbs(2.0, 1e-8));
  CHECK_THAT(g2[1], Catch::Matchers::WithinAbs(4.0, 1e-8));

  CHECK_THROWS_AS(finite_diff_grad(square, {1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("batched matrix products match the naive oracle", "[numerics]") {
  RngStream rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t m = 1 + rng.next_below(8);
    std::size_t k = 1 + rng.next_below(8);
    std::size_t n = 1 + rng.next_below(8);
    Matrix a(m, k), b(k, n);
    for (double& v : a.values) v = rng.uniform(-2.0, 2.0);
    for (double& v : b.values) v = rng.uniform(-2.0, 2.0);
    Matrix expect = oracle::naive_matmul(a, b);

    Matrix got;
    matmul_nn(a, b, got);
    REQUIRE(got.rows == expect.rows);
    REQUIRE(got.cols == expect.cols);
    for (std::size_t i = 0; i < got.values.size(); ++i)
      CHECK(std::abs(got.values[i] - expect.values[i]) < 1e-12);

    // a * b == a * (b^T)^T
    Matrix bt(n, k);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < n; ++c) bt(c, r) = b(r, c);
    Matrix got_nt;
    matmul_nt(a, bt, got_nt);
    for (std::size_t i = 0; i < got_nt.values.size(); ++i)
      CHECK(std::abs(got_nt.values[i] - expect.values[i]) < 1e-12);

    // a * b == (a^T)^T * b
    Matrix at(k, m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < k; ++c) at(c, r) = a(r, c);
    Matrix got_tn;
    matmul_tn(at, b, got_tn);
    for (std::size_t i = 0; i < got_tn.values.size(); ++i)
      CHECK(std::abs(got_tn.values[i] - expect.values[i]) < 1e-12);
  }
  Matrix a(2, 3), b(2, 3), out;
  CHECK_THROWS_AS(matmul_nn(a, b, out), std::invalid_argument);
}
