#include "tcbp/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tcbp/binary_io.hpp"

namespace tcbp {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0)) {
    throw std::invalid_argument("TrainConfig: lr, momentum and weight_decay must be >= 0");
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("TrainConfig: alpha must be positive");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (segments == 0) throw std::invalid_argument("TrainConfig: t must be >= 1");
}

// ------------------------------------------------------------ OptimizerState

OptimizerState OptimizerState::zeros_like(const EncoderModel& model) {
  OptimizerState s;
  for (const auto* p : model.params()) s.velocity.emplace_back(p->value.rows, p->value.cols);
  return s;
}

std::vector<std::uint8_t> OptimizerState::serialize() const {
  ByteWriter w;
  w.put_bytes("TCBPOPT");
  w.put_u32(1);
  w.put_u64(iteration);
  w.put_u32(static_cast<std::uint32_t>(velocity.size()));
  for (const auto& v : velocity) {
    w.put_u32(static_cast<std::uint32_t>(v.rows));
    w.put_u32(static_cast<std::uint32_t>(v.cols));
    // Velocities are kept exact so that a resumed run continues bit-identically.
    for (double x : v.data) w.put_u64(std::bit_cast<std::uint64_t>(x));
  }
  w.put_crc();
  return w.take();
}

OptimizerState OptimizerState::deserialize(std::span<const std::uint8_t> bytes,
                                           const std::string& what) {
  ByteReader r(bytes, what);
  r.expect_magic("TCBPOPT");
  if (r.get_u32() != 1) throw FormatError(what + ": unsupported optimizer state version");
  OptimizerState s;
  s.iteration = r.get_u64();
  const auto n = r.get_u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::size_t rows = r.get_u32();
    const std::size_t cols = r.get_u32();
    ad::Tensor v(rows, cols);
    for (auto& x : v.data) x = std::bit_cast<double>(r.get_u64());
    s.velocity.push_back(std::move(v));
  }
  r.verify_crc();
  r.expect_end();
  return s;
}

// ------------------------------------------------------------------ sampling

std::pair<std::size_t, std::size_t> sample_pair(std::size_t scene_size, Rng& rng) {
  if (scene_size < 2) throw std::invalid_argument("sample_pair: scene has fewer than 2 clips");
  auto k = static_cast<std::size_t>(rng.uniform_index(scene_size * (scene_size - 1) / 2));
  for (std::size_t i = 0; i + 1 < scene_size; ++i) {
    const std::size_t row = scene_size - 1 - i;
    if (k < row) return {i, i + 1 + k};
    k -= row;
  }
  throw std::logic_error("sample_pair: index out of range");
}

std::vector<PairSample> sample_batch(std::span<const LoadedScene> scenes,
                                     const TrainConfig& config, Rng& rng) {
  std::vector<std::size_t> usable;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (scenes[s].clips.size() >= 2) usable.push_back(s);
  }
  if (usable.empty()) throw std::invalid_argument("sample_batch: no scene with at least 2 clips");

  std::vector<std::size_t> picked(config.batch_size);
  std::vector<PairSample> batch(config.batch_size);
  for (std::size_t b = 0; b < config.batch_size; ++b) {
    picked[b] = usable[rng.uniform_index(usable.size())];
    const auto& sc = scenes[picked[b]];
    const auto [i, j] = sample_pair(sc.clips.size(), rng);
    batch[b].earlier = &sc.clips[i];
    batch[b].later = &sc.clips[j];
    batch[b].sampling_seed = rng.next_u64();
  }
  if (config.use_negatives) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      std::vector<const ClipFeatures*> pool;
      for (std::size_t o = 0; o < config.batch_size; ++o) {
        if (picked[o] == picked[b]) continue;
        // Each distinct scene contributes its clips once.
        if (std::find(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(o), picked[o]) !=
            picked.begin() + static_cast<std::ptrdiff_t>(o)) {
          continue;
        }
        for (const auto& c : scenes[picked[o]].clips) pool.push_back(&c);
      }
      if (!pool.empty()) batch[b].corrupt = pool[rng.uniform_index(pool.size())];
    }
  }
  return batch;
}

// ------------------------------------------------------------------ training

void sgd_momentum_update(EncoderModel& model, OptimizerState& state, const TrainConfig& config) {
  auto params = model.params();
  if (state.velocity.size() != params.size()) {
    throw std::logic_error("optimizer state does not match the model parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& v = state.velocity[k];
    if (!v.same_shape(p.value)) throw std::logic_error("velocity shape mismatch for " + p.name);
    const double wd = p.decay ? config.weight_decay : 0.0;
    for (std::size_t e = 0; e < v.size(); ++e) {
      v.data[e] = config.momentum * v.data[e] - config.lr * (p.grad.data[e] + wd * p.value.data[e]);
      p.value.data[e] += v.data[e];
    }
  }
  ++state.iteration;
}

StepStats train_step(EncoderModel& model, OptimizerState& state, std::span<const PairSample> batch,
                     const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  for (auto* p : model.params()) p->zero_grad();

  ad::Tape tape;
  const auto bound = bind_trainable(tape, model);
  auto encode = [&](const ClipFeatures& clip, std::uint64_t seed) {
    const auto phi = encode_on_tape(tape, model, bound, prepare_input(model, clip, seed)).phi;
    // inf - inf inside the hinge would otherwise read as a zero loss
    for (double v : tape.value(phi).data) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("train_step: non-finite embedding for clip " + clip.clip_id +
                                 " at iteration " + std::to_string(state.iteration));
      }
    }
    return phi;
  };

  StepStats stats;
  ad::Var total;
  auto accumulate = [&](ad::Var term) { total = total.valid() ? ad::add(tape, total, term) : term; };
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& pair = batch[b];
    const auto phi_i = encode(*pair.earlier, derive_seed(pair.sampling_seed, 0));
    const auto phi_j = encode(*pair.later, derive_seed(pair.sampling_seed, 1));
    const auto pos = ad::pair_loss(tape, phi_i, phi_j);
    stats.positive_loss += tape.value(pos).data[0];
    accumulate(pos);
    if (config.use_negatives && pair.corrupt) {
      const auto phi_c = encode(*pair.corrupt, derive_seed(pair.sampling_seed, 2));
      const auto neg = ad::margin_hinge(tape, ad::pair_loss(tape, phi_i, phi_c), config.alpha);
      stats.negative_loss += tape.value(neg).data[0];
      ++stats.negatives;
      accumulate(neg);
    }
  }
  const auto mean = ad::scale(tape, total, 1.0 / static_cast<double>(batch.size()));
  stats.loss = tape.value(mean).data[0];
  if (!std::isfinite(stats.loss)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss at iteration " << state.iteration
        << " (positive sum " << stats.positive_loss << ", negative sum " << stats.negative_loss
        << ", batch " << batch.size() << ")";
    throw std::runtime_error(msg.str());
  }
  tape.backward(mean);
  for (const auto* p : model.params()) {
    for (double g : p->grad.data) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("train_step: non-finite gradient in " + p->name +
                                 " at iteration " + std::to_string(state.iteration));
      }
    }
  }
  sgd_momentum_update(model, state, config);
  return stats;
}

std::vector<TrainLogEntry> train(
    EncoderModel& model, std::span<const LoadedScene> scenes, const TrainConfig& config,
    const std::function<std::optional<double>(std::size_t, const StepStats&)>& on_step) {
  auto state = OptimizerState::zeros_like(model);
  return train(model, scenes, config, state, on_step);
}

std::vector<TrainLogEntry> train(
    EncoderModel& model, std::span<const LoadedScene> scenes, const TrainConfig& config,
    OptimizerState& state,
    const std::function<std::optional<double>(std::size_t, const StepStats&)>& on_step) {
  config.validate();
  if (config.segments != model.config().segments || config.sampling != model.config().sampling) {
    throw std::invalid_argument("train: TrainConfig t/sampling differ from the model's");
  }
  Rng rng(derive_seed(config.seed, 3));
  std::vector<TrainLogEntry> log;
  log.reserve(config.iterations);
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const auto batch = sample_batch(scenes, config, rng);
    const auto stats = train_step(model, state, batch, config);
    TrainLogEntry entry{it, stats.loss, std::nullopt};
    if (on_step) entry.val_accuracy = on_step(it, stats);
    log.push_back(entry);
  }
  return log;
}

// ---------------------------------------------------------------- evaluation

EvalResult evaluate(const EncoderModel& model, std::span<const LoadedScene> scenes,
                    const EvalOptions& options) {
  EvalResult result;
  result.scenes.resize(scenes.size());

  auto run_scene = [&](std::size_t s) {
    const auto& sc = scenes[s];
    const std::size_t m = sc.clips.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.shuffle) {
      Rng rng(derive_seed(options.seed, 2 * s));
      rng.shuffle(std::span(order));
    }
    std::vector<std::vector<double>> phis(m);
    for (std::size_t k = 0; k < m; ++k) {
      phis[k] = encode_clip(model, sc.clips[order[k]],
                            derive_seed(options.seed, 2 * s + 1) + order[k])
                    .phi;
    }
    const auto inferred = infer_order(phis, options.max_clips);
    auto& out = result.scenes[s];
    out.scene_id = sc.scene.scene_id;
    out.total_loss = inferred.total_loss;
    std::vector<std::size_t> predicted(m);
    for (std::size_t k = 0; k < m; ++k) predicted[k] = order[inferred.permutation[k]];
    out.correct = std::is_sorted(predicted.begin(), predicted.end());
    for (std::size_t k = 0; k < m; ++k) {
      out.predicted.push_back(sc.clips[predicted[k]].clip_id);
      out.ground_truth.push_back(sc.clips[k].clip_id);
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, scenes.size()));
  if (threads == 1) {
    for (std::size_t s = 0; s < scenes.size(); ++s) run_scene(s);
  } else {
    std::vector<std::jthread> workers;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t s = w; s < scenes.size(); s += threads) run_scene(s);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    workers.clear();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    result.report.add(scenes[s].clips.size(), result.scenes[s].correct);
  }
  return result;
}

}  // namespace tcbp
