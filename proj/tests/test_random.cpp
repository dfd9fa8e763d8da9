#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "lorafed/random.hpp"

using namespace lorafed;

TEST(RandomSource, SameSeedAndStreamReproduce) {
  RandomSource a(42, 7), b(42, 7), c(42, 8);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(RandomSource, KnownSequenceIsPinned) {
  // The generator is pure integer arithmetic, so these values hold on every
  // platform and must never change.
  RandomSource rs(0, 0);
  EXPECT_EQ(rs.next_u64(), 2609773217389865299ULL);
  EXPECT_EQ(rs.next_u64(), 952314809521188194ULL);
  EXPECT_EQ(rs.next_u64(), 2494171495035241331ULL);
  RandomSource normal(12345, StreamRole::kClient, {3, 7});
  EXPECT_DOUBLE_EQ(normal.normal(), -1.5876295943727787);
}

TEST(RandomSource, DerivedStreamsAreDistinct) {
  std::set<std::uint64_t> ids;
  for (std::uint64_t k = 0; k < 16; ++k)
    for (std::uint64_t t = 1; t <= 16; ++t) ids.insert(derive_stream(StreamRole::kClient, {k, t}));
  EXPECT_EQ(ids.size(), 256u);
  EXPECT_NE(derive_stream(StreamRole::kClient, {1, 2}), derive_stream(StreamRole::kClient, {2, 1}));
  EXPECT_NE(derive_stream(StreamRole::kData, {}), derive_stream(StreamRole::kModel, {}));
}

TEST(RandomSource, PortableLogAndExpAgreeWithLibm) {
  for (double x : {1e-300, 1e-10, 0.1, 0.5, 0.7071, 1.0, 2.0, 3.14159, 1e10}) {
    EXPECT_NEAR(detail::portable_log(x), std::log(x), 1e-14 * std::max(1.0, std::abs(std::log(x))));
  }
  for (double x : {-700.0, -20.0, -1.0, 0.0, 0.5, 1.0, 10.0, 700.0}) {
    EXPECT_NEAR(detail::portable_exp(x) / std::exp(x), 1.0, 1e-14);
  }
}

TEST(RandomSource, UniformIndexStaysInRange) {
  RandomSource rs(3, 3);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) ++hist[rs.uniform_index(7)];
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
  EXPECT_THROW(rs.uniform_index(0), Error);
}

TEST(SampleGaussian, ZeroSigmaIsConstant) {
  RandomSource rs(1, 1);
  const Tensor t = sample_gaussian(rs, {3, 4}, 0.0, 0.0);
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
  const Tensor c = sample_gaussian(rs, {5}, 2.5, 0.0);
  for (double v : c.data()) EXPECT_EQ(v, 2.5);
}

TEST(SampleGaussian, Deterministic) {
  RandomSource a(77, 5), b(77, 5);
  EXPECT_TRUE(sample_gaussian(a, {10, 10}, 1.0, 2.0).bitwise_equal(sample_gaussian(b, {10, 10}, 1.0, 2.0)));
}

TEST(SampleGaussian, NegativeSigmaRejected) {
  RandomSource rs(1, 1);
  EXPECT_THROW(sample_gaussian(rs, {2}, 0.0, -1.0), Error);
}

TEST(SampleGaussian, MomentsOfAMillionDraws) {
  RandomSource rs(2024, 1);
  const Tensor t = sample_gaussian(rs, {1000, 1000}, 0.0, 1.0);
  double mean = 0.0;
  for (double v : t.data()) mean += v;
  mean /= static_cast<double>(t.size());
  double var = 0.0;
  for (double v : t.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(t.size() - 1);
  EXPECT_LT(std::abs(mean), 0.005);
  EXPECT_GE(var, 0.99);
  EXPECT_LE(var, 1.01);
}

TEST(SampleDirichlet, SingleComponent) {
  RandomSource rs(1, 1);
  EXPECT_EQ(sample_dirichlet(rs, 0.3, 1), std::vector<double>{1.0});
}

TEST(SampleDirichlet, InvalidArguments) {
  RandomSource rs(1, 1);
  EXPECT_THROW(sample_dirichlet(rs, 0.0, 3), Error);
  EXPECT_THROW(sample_dirichlet(rs, -1.0, 3), Error);
  EXPECT_THROW(sample_dirichlet(rs, 1.0, 0), Error);
}

TEST(SampleDirichlet, HugeAlphaConcentratesAtUniform) {
  RandomSource rs(5, 9);
  for (int i = 0; i < 1000; ++i) {
    for (double p : sample_dirichlet(rs, 1e6, 4)) EXPECT_NEAR(p, 0.25, 0.01);
  }
}

TEST(SampleDirichlet, SmallAlphaIsSkewed) {
  RandomSource rs(6, 9);
  double sum_max = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_dirichlet(rs, 0.1, 4);
    sum_max += *std::max_element(p.begin(), p.end());
  }
  EXPECT_GT(sum_max / draws, 0.70);
}

TEST(SampleDirichlet, SumsToOneOverRandomCases) {
  RandomSource rs(8, 8);
  for (int i = 0; i < 10000; ++i) {
    const double alpha = std::exp(rs.uniform(std::log(1e-3), std::log(1e6)));
    const std::size_t k = 1 + rs.uniform_index(32);
    const auto p = sample_dirichlet(rs, alpha, k);
    ASSERT_EQ(p.size(), k);
    double s = 0.0;
    for (double v : p) {
      ASSERT_GE(v, 0.0);
      s += v;
    }
    ASSERT_NEAR(s, 1.0, 1e-12) << "alpha=" << alpha << " k=" << k;
  }
}

TEST(SampleDirichlet, ComponentMeansMatchTheory) {
  RandomSource rs(10, 1);
  std::vector<double> mean(5, 0.0);
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_dirichlet(rs, 0.5, 5);
    for (std::size_t j = 0; j < 5; ++j) mean[j] += p[j] / draws;
  }
  for (double m : mean) EXPECT_NEAR(m, 0.2, 0.01);
}

TEST(Shuffle, PermutationIsBijective) {
  RandomSource rs(4, 4);
  auto p = random_permutation(rs, 1000);
  std::sort(p.begin(), p.end());
  std::vector<std::size_t> iota(1000);
  std::iota(iota.begin(), iota.end(), 0u);
  EXPECT_EQ(p, iota);
}
