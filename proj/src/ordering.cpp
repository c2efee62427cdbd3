#include "tcbp/ordering.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace tcbp {

void Scene::validate(std::size_t max_clips) const {
  if (clip_ids.size() < kMinSceneClips || clip_ids.size() > max_clips) {
    throw std::invalid_argument("scene " + scene_id + ": scene size out of range (" +
                                std::to_string(clip_ids.size()) + " clips, allowed " +
                                std::to_string(kMinSceneClips) + ".." +
                                std::to_string(max_clips) + ")");
  }
  std::set<std::string> seen(clip_ids.begin(), clip_ids.end());
  if (seen.size() != clip_ids.size()) {
    throw std::invalid_argument("scene " + scene_id + ": duplicate clip ids");
  }
}

double pair_loss(std::span<const double> earlier, std::span<const double> later) {
  if (earlier.size() != later.size()) {
    throw std::invalid_argument("pair_loss: length mismatch (" + std::to_string(earlier.size()) +
                                " vs " + std::to_string(later.size()) + ")");
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < earlier.size(); ++k) {
    if (earlier[k] < 0.0 || later[k] < 0.0) {
      throw std::invalid_argument("pair_loss: ordering features must be nonnegative");
    }
    const double diff = earlier[k] - later[k];
    if (diff > 0.0) loss += diff * diff;
  }
  return loss;
}

double margin_hinge(double loss, double alpha) { return std::max(0.0, alpha - loss); }

double negative_loss(std::span<const double> phi_i, std::span<const double> phi_corrupt,
                     double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("negative_loss: margin must be positive");
  return margin_hinge(pair_loss(phi_i, phi_corrupt), alpha);
}

std::vector<std::vector<double>> pairwise_losses(std::span<const std::vector<double>> phis) {
  const std::size_t m = phis.size();
  std::vector<std::vector<double>> losses(m, std::vector<double>(m, 0.0));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      if (a != b) losses[a][b] = pair_loss(phis[a], phis[b]);
    }
  }
  return losses;
}

double permutation_loss(const std::vector<std::vector<double>>& losses,
                        std::span<const std::size_t> perm) {
  double total = 0.0;
  for (std::size_t a = 0; a < perm.size(); ++a) {
    for (std::size_t b = a + 1; b < perm.size(); ++b) total += losses[perm[a]][perm[b]];
  }
  return total;
}

OrderingResult infer_order(std::span<const std::vector<double>> phis, std::size_t max_clips) {
  const std::size_t m = phis.size();
  if (m < kMinSceneClips) {
    throw std::invalid_argument("infer_order: need at least 2 clips, got " + std::to_string(m));
  }
  if (m > max_clips) {
    throw std::invalid_argument("infer_order: " + std::to_string(m) +
                                " clips exceed the brute-force cap of " +
                                std::to_string(max_clips) + "; raise max_clips to override");
  }
  const auto losses = pairwise_losses(phis);

  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  OrderingResult best{perm, permutation_loss(losses, perm), true};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double total = permutation_loss(losses, perm);
    if (total < best.total_loss) {
      best.total_loss = total;
      best.permutation = perm;
    }
  }
  best.correct = std::is_sorted(best.permutation.begin(), best.permutation.end());
  return best;
}

double ordering_accuracy(std::span<const OrderingResult> results) {
  if (results.empty()) return 0.0;
  const auto hits = std::count_if(results.begin(), results.end(),
                                  [](const OrderingResult& r) { return r.correct; });
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double chance_accuracy(const std::map<std::size_t, std::size_t>& size_histogram) {
  double expected = 0.0;
  std::size_t total = 0;
  for (const auto& [size, count] : size_histogram) {
    if (size < kMinSceneClips) throw std::invalid_argument("chance_accuracy: scene size below 2");
    double factorial = 1.0;
    for (std::size_t k = 2; k <= size; ++k) factorial *= static_cast<double>(k);
    expected += static_cast<double>(count) / factorial;
    total += count;
  }
  if (total == 0) throw std::invalid_argument("chance_accuracy: empty histogram");
  return expected / static_cast<double>(total);
}

std::map<std::size_t, std::size_t> AccuracyReport::histogram() const {
  std::map<std::size_t, std::size_t> h;
  for (const auto& [size, stats] : by_size) h[size] = stats.scenes;
  return h;
}

void AccuracyReport::add(std::size_t scene_size, bool is_correct) {
  ++scenes;
  auto& s = by_size[scene_size];
  ++s.scenes;
  if (is_correct) {
    ++correct;
    ++s.correct;
  }
}

}  // namespace tcbp
