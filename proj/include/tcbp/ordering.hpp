#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tcbp {

inline constexpr std::size_t kMinSceneClips = 2;
inline constexpr std::size_t kMaxSceneClips = 6;
inline constexpr double kDefaultMargin = 0.2;

// Clip ids in ground-truth temporal order.
struct Scene {
  std::string scene_id;
  std::vector<std::string> clip_ids;

  std::size_t size() const { return clip_ids.size(); }
  // 2 <= M <= max_clips, distinct ids.
  void validate(std::size_t max_clips = kMaxSceneClips) const;
};

struct OrderingResult {
  // permutation[k] = index of the clip placed at position k.
  std::vector<std::size_t> permutation;
  double total_loss = 0.0;
  // permutation is the identity, i.e. the input order is reproduced.
  bool correct = false;
};

// Order-violation loss ||max(0, earlier - later)||^2; zero iff earlier <= later
// elementwise. Inputs must be nonnegative and of equal length.
double pair_loss(std::span<const double> earlier, std::span<const double> later);

// max(0, alpha - loss).
double margin_hinge(double loss, double alpha);

// Hinge on the loss of a corrupted pair: max(0, alpha - L(phi_i, phi_corrupt)).
double negative_loss(std::span<const double> phi_i, std::span<const double> phi_corrupt,
                     double alpha = kDefaultMargin);

// losses[a][b] = pair_loss(phis[a], phis[b]); M*(M-1) evaluations.
std::vector<std::vector<double>> pairwise_losses(std::span<const std::vector<double>> phis);

// Sum over positions a < b of losses[perm[a]][perm[b]].
double permutation_loss(const std::vector<std::vector<double>>& losses,
                        std::span<const std::size_t> perm);

// Brute force over all M! orders; returns the one with the smallest total
// loss, the lexicographically smallest permutation among exact ties.
OrderingResult infer_order(std::span<const std::vector<double>> phis,
                           std::size_t max_clips = kMaxSceneClips);

// Fraction of results marked correct.
double ordering_accuracy(std::span<const OrderingResult> results);

// Expected accuracy of a uniformly random order: sum_M n_M / M! over sum_M n_M.
// Keys are scene sizes, values scene counts.
double chance_accuracy(const std::map<std::size_t, std::size_t>& size_histogram);

struct SizeAccuracy {
  std::size_t scenes = 0;
  std::size_t correct = 0;
  double accuracy() const { return scenes ? static_cast<double>(correct) / scenes : 0.0; }
};

struct AccuracyReport {
  std::size_t scenes = 0;
  std::size_t correct = 0;
  std::map<std::size_t, SizeAccuracy> by_size;

  double accuracy() const { return scenes ? static_cast<double>(correct) / scenes : 0.0; }
  std::map<std::size_t, std::size_t> histogram() const;
  void add(std::size_t scene_size, bool is_correct);
};

}  // namespace tcbp
