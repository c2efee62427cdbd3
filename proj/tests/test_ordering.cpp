#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tcbp/ordering.hpp"
#include "tcbp/random.hpp"

using namespace tcbp;

namespace {

std::vector<std::vector<double>> random_phis(Rng& rng, std::size_t m, std::size_t dim) {
  std::vector<std::vector<double>> phis(m, std::vector<double>(dim));
  for (auto& p : phis)
    for (auto& v : p) v = std::fabs(rng.normal());
  return phis;
}

// Independent brute force: std::next_permutation walks permutations in
// lexicographic order; keep the first strict minimum.
std::pair<std::vector<std::size_t>, double> oracle_order(
    const std::vector<std::vector<double>>& phis) {
  const std::size_t m = phis.size();
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best;
  double best_loss = std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b) {
        double l = 0;
        for (std::size_t k = 0; k < phis[0].size(); ++k) {
          const double v = std::max(0.0, phis[perm[a]][k] - phis[perm[b]][k]);
          l += v * v;
        }
        total += l;
      }
    if (total < best_loss) {
      best_loss = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best, best_loss};
}

double exact_chance(const std::vector<std::pair<int, int>>& hist) {
  double num = 0, den = 0;
  for (auto [size, n] : hist) {
    double f = 1;
    for (int k = 2; k <= size; ++k) f *= k;
    num += n / f;
    den += n;
  }
  return num / den;
}

}  // namespace

TEST(PairLoss, ZeroIffElementwiseOrdered) {
  const std::vector<double> a{0.1, 0.5, 0.2}, b{0.3, 0.5, 0.9};
  EXPECT_EQ(pair_loss(a, b), 0.0);
  EXPECT_NEAR(pair_loss(b, a), 0.2 * 0.2 + 0.7 * 0.7, 1e-15);
  const std::vector<double> c{0.1, 0.6, 0.2};
  EXPECT_NEAR(pair_loss(c, b), 0.01, 1e-15);
  EXPECT_NEAR(pair_loss(c, a), 0.01, 1e-15);
}

TEST(PairLoss, RejectsNegativeOrMismatched) {
  const std::vector<double> a{0.1, -0.5}, b{0.3, 0.5}, c{0.3};
  EXPECT_THROW(pair_loss(a, b), std::invalid_argument);
  EXPECT_THROW(pair_loss(b, c), std::invalid_argument);
}

TEST(NegativeLoss, Hinge) {
  EXPECT_DOUBLE_EQ(margin_hinge(0.05, 0.2), 0.15);
  EXPECT_DOUBLE_EQ(margin_hinge(0.5, 0.2), 0.0);
  const std::vector<double> a{1.0, 0.0}, b{0.8, 0.0};
  EXPECT_NEAR(negative_loss(a, b), 0.2 - 0.04, 1e-15);
  EXPECT_THROW(negative_loss(a, b, 0.0), std::invalid_argument);
}

TEST(InferOrder, MonotoneEmbeddingsRecoverIdentity) {
  std::vector<std::vector<double>> phis;
  for (int k = 0; k < 5; ++k) phis.push_back({0.1 * k, 0.2 * k + 0.05, 1.0});
  const auto r = infer_order(phis);
  EXPECT_EQ(r.permutation, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_TRUE(r.correct);
  EXPECT_EQ(r.total_loss, 0.0);

  std::reverse(phis.begin(), phis.end());
  const auto rev = infer_order(phis);
  EXPECT_EQ(rev.permutation, (std::vector<std::size_t>{4, 3, 2, 1, 0}));
  EXPECT_FALSE(rev.correct);
}

TEST(InferOrder, MatchesIndependentBruteForce) {
  Rng rng(31);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t m = 2 + rng.uniform_index(5);
    const auto phis = random_phis(rng, m, 4);
    const auto r = infer_order(phis);
    const auto [perm, loss] = oracle_order(phis);
    EXPECT_EQ(r.permutation, perm);
    EXPECT_NEAR(r.total_loss, loss, 1e-12);
  }
}

TEST(InferOrder, TiesResolveLexicographically) {
  // Identical embeddings: every order scores zero.
  std::vector<std::vector<double>> same(4, std::vector<double>{0.3, 0.3});
  EXPECT_EQ(infer_order(same).permutation, (std::vector<std::size_t>{0, 1, 2, 3}));
  // Clips 1 and 2 identical; both placements of them tie.
  std::vector<std::vector<double>> phis{{0.9}, {0.5}, {0.5}};
  EXPECT_EQ(infer_order(phis).permutation, (std::vector<std::size_t>{1, 2, 0}));
}

TEST(InferOrder, SizeCap) {
  Rng rng(32);
  const auto seven = random_phis(rng, 7, 3);
  try {
    infer_order(seven);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("max"), std::string::npos) << e.what();
  }
  EXPECT_EQ(infer_order(seven, 7).permutation.size(), 7u);
  EXPECT_THROW(infer_order(random_phis(rng, 1, 3)), std::invalid_argument);
}

TEST(InferOrder, PermutationLossSumsForwardPairs) {
  Rng rng(33);
  const auto phis = random_phis(rng, 4, 3);
  const auto losses = pairwise_losses(phis);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  double want = 0;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) want += pair_loss(phis[perm[a]], phis[perm[b]]);
  EXPECT_NEAR(permutation_loss(losses, perm), want, 1e-14);
  for (std::size_t a = 0; a < 4; ++a) EXPECT_EQ(losses[a][a], 0.0);
}

// Uninformative embeddings order a size-M scene correctly 1/M! of the time.
TEST(InferOrder, RandomEmbeddingsHitChance) {
  Rng rng(34);
  const int n = 20000;
  for (std::size_t m = 2; m <= 6; ++m) {
    int correct = 0;
    for (int k = 0; k < n; ++k) correct += infer_order(random_phis(rng, m, 3)).correct;
    double f = 1;
    for (std::size_t j = 2; j <= m; ++j) f *= static_cast<double>(j);
    const double p = 1.0 / f;
    const double sigma = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(static_cast<double>(correct) / n, p, 4 * sigma) << "M=" << m;
  }
}

TEST(Chance, ReferenceHistograms) {
  const std::map<std::size_t, std::size_t> val{{2, 958}, {3, 472}, {4, 203}, {5, 100}, {6, 51}};
  const std::map<std::size_t, std::size_t> test{{2, 1333}, {3, 588}, {4, 325}, {5, 135}, {6, 62}};
  EXPECT_NEAR(chance_accuracy(val),
              exact_chance({{2, 958}, {3, 472}, {4, 203}, {5, 100}, {6, 51}}), 1e-15);
  EXPECT_NEAR(chance_accuracy(test),
              exact_chance({{2, 1333}, {3, 588}, {4, 325}, {5, 135}, {6, 62}}), 1e-15);
  EXPECT_NEAR(100 * chance_accuracy(val), 31.78, 0.01);
  EXPECT_NEAR(100 * chance_accuracy(test), 31.89, 0.01);
}

TEST(Chance, SingleSizes) {
  EXPECT_DOUBLE_EQ(chance_accuracy({{2, 10}}), 0.5);
  EXPECT_DOUBLE_EQ(chance_accuracy({{6, 1}}), 1.0 / 720);
  EXPECT_THROW(chance_accuracy({}), std::invalid_argument);
  EXPECT_THROW(chance_accuracy({{1, 5}}), std::invalid_argument);
}

TEST(Scene, Validation) {
  EXPECT_NO_THROW((Scene{"s", {"a", "b"}}.validate()));
  EXPECT_THROW((Scene{"s", {"a"}}.validate()), std::invalid_argument);
  EXPECT_THROW((Scene{"s", {"a", "b", "c", "d", "e", "f", "g"}}.validate()),
               std::invalid_argument);
  EXPECT_THROW((Scene{"s", {"a", "a"}}.validate()), std::invalid_argument);
}

TEST(AccuracyReport, Aggregates) {
  AccuracyReport r;
  r.add(2, true);
  r.add(2, false);
  r.add(3, true);
  EXPECT_EQ(r.scenes, 3u);
  EXPECT_DOUBLE_EQ(r.accuracy(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.by_size.at(2).accuracy(), 0.5);
  EXPECT_EQ(r.histogram(), (std::map<std::size_t, std::size_t>{{2, 2}, {3, 1}}));
}

TEST(PairLoss, HandValues) {
  EXPECT_EQ(pair_loss(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0);
  EXPECT_EQ(pair_loss(std::vector<double>{3, 2}, std::vector<double>{1, 5}), 4.0);
  EXPECT_EQ(pair_loss(std::vector<double>{0.4, 0.7}, std::vector<double>{0.4, 0.7}), 0.0);
}

TEST(PairLoss, InvariantToSharedDimensionPermutation) {
  Rng rng(31);
  auto phis = random_phis(rng, 2, 9);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<double> a(9), b(9);
  for (std::size_t k = 0; k < 9; ++k) {
    a[k] = phis[0][perm[k]];
    b[k] = phis[1][perm[k]];
  }
  EXPECT_NEAR(pair_loss(a, b), pair_loss(phis[0], phis[1]), 1e-12);
}

TEST(PairLoss, ZeroBothWaysOnlyWhenEqual) {
  Rng rng(32);
  for (int rep = 0; rep < 200; ++rep) {
    auto phis = random_phis(rng, 2, 3);
    if (rep % 2 == 0) phis[1] = phis[0];
    const bool both_zero = pair_loss(phis[0], phis[1]) == 0 && pair_loss(phis[1], phis[0]) == 0;
    EXPECT_EQ(both_zero, phis[0] == phis[1]);
  }
}

TEST(NegativeLoss, HandValues) {
  EXPECT_NEAR(margin_hinge(0.0, 0.2), 0.2, 1e-15);
  EXPECT_EQ(margin_hinge(0.5, 0.2), 0.0);
  EXPECT_NEAR(margin_hinge(0.15, 0.2), 0.05, 1e-15);
}

TEST(InferOrder, TwoClipsHandValue) {
  const std::vector<std::vector<double>> phis{{0, 0}, {1, 1}};
  const auto r = infer_order(phis);
  EXPECT_EQ(r.permutation, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(r.total_loss, 0.0);
  const auto losses = pairwise_losses(phis);
  EXPECT_EQ(permutation_loss(losses, std::vector<std::size_t>{1, 0}), 2.0);
}

TEST(InferOrder, SixClipsOfWideEmbeddingsIsFast) {
  Rng rng(33);
  const auto phis = random_phis(rng, 6, 2048);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = infer_order(phis);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(r.permutation, oracle_order(phis).first);
  EXPECT_LT(secs, 1.0);
}
