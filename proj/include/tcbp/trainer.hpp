#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcbp/dataio.hpp"
#include "tcbp/encoder.hpp"
#include "tcbp/grad.hpp"
#include "tcbp/ordering.hpp"
#include "tcbp/random.hpp"

namespace tcbp {

struct TrainConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  std::size_t iterations = 5000;
  double alpha = kDefaultMargin;
  bool use_negatives = false;
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::CLast;
  std::size_t segments = 3;

  void validate() const;
};

// Heavy-ball momentum buffers, one per model parameter.
struct OptimizerState {
  std::vector<ad::Tensor> velocity;
  std::uint64_t iteration = 0;

  static OptimizerState zeros_like(const EncoderModel& model);
  std::vector<std::uint8_t> serialize() const;
  static OptimizerState deserialize(std::span<const std::uint8_t> bytes, const std::string& what);
};

// Uniform over the M(M-1)/2 forward pairs (i, j), i < j.
std::pair<std::size_t, std::size_t> sample_pair(std::size_t scene_size, Rng& rng);

struct PairSample {
  const ClipFeatures* earlier = nullptr;
  const ClipFeatures* later = nullptr;
  // Replacement for `later` taken from another scene of the batch, if any.
  const ClipFeatures* corrupt = nullptr;
  std::uint64_t sampling_seed = 0;
};

// batch_size scenes drawn uniformly with replacement, one forward pair each.
// With negatives enabled, each pair also gets a corrupting clip drawn
// uniformly from the other scenes in the batch.
std::vector<PairSample> sample_batch(std::span<const LoadedScene> scenes,
                                     const TrainConfig& config, Rng& rng);

struct StepStats {
  double loss = 0.0;           // mean over pairs of (positive + negative) terms
  double positive_loss = 0.0;  // sum of order-violation losses
  double negative_loss = 0.0;  // sum of margin hinges
  std::size_t negatives = 0;
};

// v <- momentum*v - lr*(g + wd*theta) (no decay on biases); theta <- theta + v.
void sgd_momentum_update(EncoderModel& model, OptimizerState& state, const TrainConfig& config);

// Forward/backward over one batch and one SGD update. Throws on a
// non-finite loss, before any parameter is touched.
StepStats train_step(EncoderModel& model, OptimizerState& state, std::span<const PairSample> batch,
                     const TrainConfig& config);

struct TrainLogEntry {
  std::size_t iteration = 0;
  double loss = 0.0;
  std::optional<double> val_accuracy;
};

// Runs config.iterations steps from a fresh optimizer state. `on_step`, if
// set, sees every step's stats and may return a validation accuracy to log.
std::vector<TrainLogEntry> train(
    EncoderModel& model, std::span<const LoadedScene> scenes, const TrainConfig& config,
    const std::function<std::optional<double>(std::size_t iter, const StepStats&)>& on_step = {});

// Same, continuing from (and updating) an existing optimizer state.
std::vector<TrainLogEntry> train(
    EncoderModel& model, std::span<const LoadedScene> scenes, const TrainConfig& config,
    OptimizerState& state,
    const std::function<std::optional<double>(std::size_t iter, const StepStats&)>& on_step = {});

struct SceneOrdering {
  std::string scene_id;
  std::vector<std::string> predicted;
  std::vector<std::string> ground_truth;
  double total_loss = 0.0;
  bool correct = false;
};

struct EvalOptions {
  // Seeds the presentation shuffle and random segment sampling.
  std::uint64_t seed = 0;
  // Clips are shuffled before inference so that ties cannot leak the
  // ground-truth order.
  bool shuffle = true;
  std::size_t threads = 1;
  std::size_t max_clips = kMaxSceneClips;
};

struct EvalResult {
  AccuracyReport report;
  std::vector<SceneOrdering> scenes;
};

EvalResult evaluate(const EncoderModel& model, std::span<const LoadedScene> scenes,
                    const EvalOptions& options = {});

}  // namespace tcbp
