#include <doctest.h>

#include <cmath>
#include <limits>

#include "cil/errors.hpp"
#include "cil/numerics.hpp"
#include "cil/rng.hpp"

using namespace cil;

TEST_CASE("softmax_range: uniform logits give uniform probabilities") {
  const std::vector<double> logits{5, 5, 5, 5};
  const auto p = softmax_range(logits, {0, 4}, 1.0);
  for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax_range: logits ln6, ln3, ln1 give 0.6/0.3/0.1") {
  const std::vector<double> logits{std::log(6.0), std::log(3.0), std::log(1.0)};
  const auto p = softmax_range(logits, {0, 3}, 1.0);
  CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("softmax_range: temperature 2 closed form") {
  const std::vector<double> logits{2, 0};
  const auto p = softmax_range(logits, {0, 2}, 2.0);
  const double e = std::exp(1.0);
  CHECK(p[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-9));
  CHECK(p[0] == doctest::Approx(0.731059).epsilon(1e-5));
}

TEST_CASE("softmax_range: entries outside the range are never read") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> logits{nan, 1.0, 2.0, nan};
  const auto p = softmax_range(logits, {1, 3}, 1.0);
  CHECK(std::isfinite(p[0]));
  CHECK(std::isfinite(p[1]));
  CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax_range: huge logits stay finite through max-subtraction") {
  const std::vector<double> logits{1e6, 1e6 - 3.0};
  const auto p = softmax_range(logits, {0, 2}, 1.0);
  CHECK(std::isfinite(p[0]));
  CHECK(p[0] > p[1]);
}

TEST_CASE("softmax_range: invalid arguments") {
  const std::vector<double> logits{1, 2, 3};
  CHECK_THROWS_AS(softmax_range(logits, {1, 1}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_range(logits, {0, 4}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_range(logits, {0, 3}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_range(logits, {0, 3}, -1.0), std::invalid_argument);
}

TEST_CASE("softmax_range: shift invariance and high-temperature flattening") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits(6);
    for (double& v : logits) v = rng.uniform(-8.0, 8.0);
    const auto p = softmax_range(logits, {1, 5}, 1.0);

    std::vector<double> shifted = logits;
    for (std::size_t i = 1; i < 5; ++i) shifted[i] += 3.7;
    const auto q = softmax_range(shifted, {1, 5}, 1.0);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);

    const auto flat = softmax_range(logits, {0, 6}, 1e6);
    double lo = 1.0, hi = 0.0;
    for (double v : flat) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(hi - lo < 1e-5);
  }
}

TEST_CASE("kl_divergence: zero on identical distributions") {
  CHECK(kl_divergence({0.5, 0.5}, {0.5, 0.5}) == 0.0);
  CHECK(kl_divergence({0.6, 0.3, 0.1}, {0.6, 0.3, 0.1}) == 0.0);
}

TEST_CASE("kl_divergence: near-point-mass against uniform is ln 2") {
  const double eps = 1e-15;
  const double kl = kl_divergence({1.0 - eps, eps}, {0.5, 0.5});
  CHECK(kl == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("kl_divergence: zero q entries contribute nothing, tiny p is clamped") {
  CHECK(kl_divergence({0.0, 1.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::isfinite(kl_divergence({0.5, 0.5}, {1.0, 0.0})));
}

TEST_CASE("kl_divergence: length mismatch") {
  CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {1.0}), std::invalid_argument);
}

TEST_CASE("kl_divergence: nonnegative, zero exactly on equal inputs") {
  Rng rng(57);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(5);
    for (double& v : logits) v = rng.uniform(-4.0, 4.0);
    const auto q = softmax_range(logits, {0, 5}, 1.0);
    for (double& v : logits) v = rng.uniform(-4.0, 4.0);
    const auto p = softmax_range(logits, {0, 5}, 1.0);

    CHECK(kl_divergence(q, p) >= 0.0);
    CHECK(kl_divergence(q, q) < 1e-12);
    double max_gap = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) max_gap = std::max(max_gap, std::abs(q[i] - p[i]));
    if (max_gap > 1e-12) CHECK(kl_divergence(q, p) > 0.0);
  }
}

TEST_CASE("finite_diff_grad: quadratic and linear functions") {
  const auto square = [](std::span<const double> x) { return x[0] * x[0]; };
  const std::vector<double> x{3.0};
  const auto g = finite_diff_grad(square, x, 1e-5);
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));

  const auto sum = [](std::span<const double> x2) { return x2[0] + x2[1]; };
  const std::vector<double> x2{1.0, 2.0};
  const auto g2 = finite_diff_grad(sum, x2, 1e-5);
  CHECK(g2[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(g2[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("finite_diff_grad: non-finite evaluation is reported") {
  const auto bad = [](std::span<const double> x) { return std::log(x[0]); };
  const std::vector<double> x{0.0};
  CHECK_THROWS_AS(finite_diff_grad(bad, x, 1e-5), NumericError);
}

TEST_CASE("matmul: associativity on random 8x8 instances") {
  Rng rng(83);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(8, 8), b(8, 8), v(8, 1);
    for (double& x : a.data()) x = rng.uniform(-1.0, 1.0);
    for (double& x : b.data()) x = rng.uniform(-1.0, 1.0);
    for (double& x : v.data()) x = rng.uniform(-1.0, 1.0);
    const Matrix left = matmul(matmul(a, b), v);
    const Matrix right = matmul(a, matmul(b, v));
    for (std::size_t i = 0; i < left.size(); ++i)
      CHECK(std::abs(left.data()[i] - right.data()[i]) < 1e-9);
  }
}

TEST_CASE("matmul: inner dimension mismatch is rejected") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
  CHECK_THROWS_AS(matmul_transposed(Matrix(2, 3), Matrix(2, 4)), std::invalid_argument);
  Matrix y(2, 2);
  CHECK_THROWS_AS(axpy(1.0, Matrix(2, 3), y), std::invalid_argument);
}

TEST_CASE("matmul_transposed agrees with matmul of the transpose") {
  Rng rng(99);
  Matrix a(3, 5), b(4, 5);
  for (double& x : a.data()) x = rng.uniform(-1.0, 1.0);
  for (double& x : b.data()) x = rng.uniform(-1.0, 1.0);
  const Matrix direct = matmul_transposed(a, b);
  const Matrix reference = matmul(a, transpose(b));
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(direct.data()[i] == doctest::Approx(reference.data()[i]).epsilon(1e-12));
}
