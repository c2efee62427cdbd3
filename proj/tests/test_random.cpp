#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "tcbp/random.hpp"

using tcbp::Rng;

TEST(Random, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

// splitmix64 reference values for state 0 (published test vector).
TEST(Random, SplitmixReference) {
  std::uint64_t state = 0;
  EXPECT_EQ(tcbp::splitmix64(state), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(tcbp::splitmix64(state), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(tcbp::splitmix64(state), 0x06C45D188009454FULL);
}

TEST(Random, DerivedStreamsDiffer) {
  EXPECT_NE(tcbp::derive_seed(7, 1), tcbp::derive_seed(7, 2));
  EXPECT_NE(tcbp::derive_seed(7, 1), tcbp::derive_seed(8, 1));
  EXPECT_EQ(tcbp::derive_seed(7, 1), tcbp::derive_seed(7, 1));
}

TEST(Random, UniformIndexCoversRange) {
  Rng rng(1);
  std::array<int, 7> counts{};
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_index(7)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  // 6 dof, p = 0.001 critical value 22.46
  EXPECT_LT(chi2, 22.46);
}

TEST(Random, NormalMoments) {
  Rng rng(3);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Random, Uniform01Bounds) {
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Random, ShuffleIsPermutation) {
  Rng rng(5);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span(v));
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}
