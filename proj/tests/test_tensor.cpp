#include <gtest/gtest.h>

#include "lorafed/random.hpp"
#include "lorafed/tensor.hpp"
#include "oracles.hpp"

using namespace lorafed;

TEST(Tensor, ConstructorsValidateShape) {
  EXPECT_THROW(Tensor("x", {2, 2}, {1.0, 2.0, 3.0}), Error);
  EXPECT_THROW(Tensor("x", {0, 2}), Error);
  Tensor t("x", {2, 3});
  EXPECT_EQ(t.size(), 6u);
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, IdentityTimesMatrix) {
  const Tensor m = Tensor::matrix("m", {{1, 2}, {3, 4}});
  const Tensor r = matmul(Tensor::identity("I", 2), m);
  EXPECT_TRUE(r.bitwise_equal(m));
}

TEST(Tensor, MatmulForcedArithmetic) {
  const Tensor r = matmul(Tensor::matrix("a", {{1, 2}, {3, 4}}), Tensor::matrix("b", {{5}, {6}}));
  ASSERT_EQ(r.dims(), (Dims{2, 1}));
  EXPECT_EQ(r(0, 0), 17.0);
  EXPECT_EQ(r(1, 0), 39.0);
}

TEST(Tensor, ZerosAnnihilate) {
  RandomSource rs(1, 7);
  const Tensor b = sample_gaussian(rs, {4, 2}, 0.0, 1.0);
  const Tensor r = matmul(Tensor::zeros("z", {3, 4}), b);
  ASSERT_EQ(r.dims(), (Dims{3, 2}));
  for (double v : r.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, MatmulShapeErrorNamesBothOperands) {
  try {
    matmul(Tensor("left", {2, 3}), Tensor("right", {2, 3}));
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
    EXPECT_NE(std::string(e.what()).find("left"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("right"), std::string::npos);
  }
}

TEST(Tensor, MatmulMatchesNaiveProduct) {
  RandomSource rs(3, 11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rs.uniform_index(9), k = 1 + rs.uniform_index(9), n = 1 + rs.uniform_index(9);
    const Tensor a = sample_gaussian(rs, {m, k}, 0.0, 1.0);
    const Tensor b = sample_gaussian(rs, {k, n}, 0.0, 1.0);
    std::vector<std::vector<double>> av(m, std::vector<double>(k)), bv(k, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) av[i][j] = a(i, j);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < n; ++j) bv[i][j] = b(i, j);
    const auto ref = oracle::naive_matmul(av, bv);
    const Tensor c = matmul(a, b);
    const Tensor tn = matmul_tn(transpose(a), b);
    const Tensor nt = matmul_nt(a, transpose(b));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_NEAR(c(i, j), ref[i][j], 1e-12);
        EXPECT_NEAR(tn(i, j), ref[i][j], 1e-12);
        EXPECT_NEAR(nt(i, j), ref[i][j], 1e-12);
      }
  }
}

TEST(Tensor, IdentityIsExactForRandomInputs) {
  RandomSource rs(5, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rs.uniform_index(12), c = 1 + rs.uniform_index(12);
    const Tensor x = sample_gaussian(rs, {n, c}, 0.0, 3.0);
    EXPECT_TRUE(matmul(Tensor::identity("I", n), x).bitwise_equal(x));
  }
}

TEST(Tensor, AxpyExamples) {
  const Tensor x = Tensor::vector("x", {1, 2});
  const Tensor y = Tensor::vector("y", {3, 4});
  EXPECT_TRUE(axpy(0.0, x, y).bitwise_equal(y));
  EXPECT_TRUE(axpy(1.0, x, Tensor::zeros("z", {2})).bitwise_equal(x));
  const Tensor r = axpy(2.0, x, y);
  EXPECT_EQ(r[0], 5.0);
  EXPECT_EQ(r[1], 8.0);
  EXPECT_THROW(axpy(1.0, x, Tensor::zeros("z", {3})), Error);
}

TEST(Tensor, AxpyLinearity) {
  RandomSource rs(9, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = sample_gaussian(rs, {7}, 0.0, 1.0);
    const Tensor y = sample_gaussian(rs, {7}, 0.0, 1.0);
    const double a = rs.uniform(-2, 2), b = rs.uniform(-2, 2);
    const Tensor lhs = axpy(a, x, axpy(b, x, y));
    const Tensor rhs = axpy(a + b, x, y);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12 * std::max(1.0, std::abs(rhs[i])));
  }
}

TEST(Tensor, NonFiniteResultsAreRejected) {
  const Tensor big = Tensor::vector("big", {1e308});
  EXPECT_THROW(axpy(10.0, big, big), Error);
}

TEST(Tensor, VectorHelpers) {
  const Tensor a = Tensor::vector("a", {3, 4});
  EXPECT_EQ(dot(a, a), 25.0);
  EXPECT_EQ(norm2(a), 5.0);
  EXPECT_EQ(max_abs_diff(a, Tensor::vector("b", {3, 2})), 2.0);
  const Tensor v = matvec(Tensor::matrix("m", {{1, 2}, {3, 4}}), Tensor::vector("x", {1, 1}));
  EXPECT_EQ(v[0], 3.0);
  EXPECT_EQ(v[1], 7.0);
}
