#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tcbp/grad.hpp"
#include "tcbp/sketch.hpp"

namespace tcbp {

using ad::Param;

// Audio, Places, ImageNet objects, video motion (R), subtitle text (S).
// The enumerator order is the fixed concatenation order.
enum class Modality : std::uint8_t { A = 0, P = 1, I = 2, R = 3, S = 4 };

inline constexpr std::size_t kModalityCount = 5;

char modality_tag(Modality m);
std::optional<Modality> modality_from_tag(char tag);
// "API" -> {A, P, I}; canonical order regardless of input order. Throws on
// unknown or repeated tags.
std::vector<Modality> parse_modality_set(std::string_view tags);
std::string modality_set_string(std::span<const Modality> set);
// Channel counts of the reference feature extractors (A=256, S=300, else 2048).
std::size_t reference_channels(Modality m);

struct ModalityFeature {
  Modality modality;
  FeatureMap data;  // c_i x t_full
};

struct ClipFeatures {
  std::string clip_id;
  std::vector<ModalityFeature> modalities;
  std::size_t t_full = 0;

  const ModalityFeature* find(Modality m) const;
  // Distinct modalities, shared t_full, identical columns for text.
  void validate() const;
};

enum class EncodingMethod : std::uint8_t { TCBP = 0, CBP = 1, MeanPool = 2, ConcatT_MLP = 3 };
enum class Sampling : std::uint8_t { Random = 0, CFirst = 1, CLast = 2 };

std::string_view to_string(EncodingMethod m);
std::string_view to_string(Sampling s);
EncodingMethod parse_method(std::string_view name);
Sampling parse_sampling(std::string_view name);

// First segment index of the window of `t` consecutive segments.
std::size_t segment_start(std::size_t t_full, std::size_t t, Sampling strategy,
                          std::uint64_t seed);

// Every modality cut to the same window of t consecutive segments.
ClipFeatures sample_segments(const ClipFeatures& clip, std::size_t t, Sampling strategy,
                             std::uint64_t seed);

// Row-stacks the requested modalities in the given order (c = sum c_i).
FeatureMap concat_modalities(const ClipFeatures& clip, std::span<const Modality> order);

struct EncoderConfig {
  std::vector<std::pair<Modality, std::size_t>> modalities;  // canonical order, channels
  EncodingMethod method = EncodingMethod::TCBP;
  std::size_t segments = 3;
  Sampling sampling = Sampling::CLast;
  std::size_t reduce_dim = 2048;
  std::size_t sketch_dim = 8192;
  std::size_t hidden_dim = 4096;
  std::size_t embed_dim = 2048;
  std::uint64_t seed = 0;

  // Reference architecture; Mean_Pool uses the narrower 2048/1024 heads.
  static EncoderConfig reference(std::span<const Modality> set, EncodingMethod method);

  std::vector<Modality> modality_order() const;
  std::size_t input_channels() const;
  void validate() const;
};

// Clip encoder: optional 1x1 channel reduction, pooling (TCBP/CBP/mean/concat),
// signed sqrt + l2, then v_clip = W1 v + b1 and phi = |W2 relu(v_clip) + b2|.
// The sketch is frozen; the linear layers are trainable.
class EncoderModel {
 public:
  explicit EncoderModel(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  // Multi-modality inputs are reduced to reduce_dim; single-modality inputs
  // are used as-is.
  bool reduces_channels() const { return config_.modalities.size() > 1; }
  std::size_t encoded_channels() const;
  // Length of v_enc.
  std::size_t encoding_dim() const;
  const SketchParams* sketch() const { return sketch_ ? &*sketch_ : nullptr; }

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  Param* find_param(std::string_view name);

  std::vector<std::uint8_t> serialize() const;
  static EncoderModel deserialize(std::span<const std::uint8_t> bytes,
                                  const std::string& what = "checkpoint");
  void save(const std::filesystem::path& path) const;
  static EncoderModel load(const std::filesystem::path& path);

 private:
  EncoderModel(EncoderConfig config, bool init_params);

  EncoderConfig config_;
  std::optional<SketchParams> sketch_;
  std::optional<Param> reduce_w_, reduce_b_;
  Param w1_, b1_, w2_, b2_;
};

struct BoundParams {
  ad::Var reduce_w, reduce_b;  // invalid when the model does not reduce channels
  ad::Var w1, b1, w2, b2;
};

// Gradients accumulate into the model's Param::grad.
BoundParams bind_trainable(ad::Tape& tape, EncoderModel& model);
// Read-only binding for inference.
BoundParams bind_frozen(ad::Tape& tape, const EncoderModel& model);

struct ClipVars {
  ad::Var input;       // c x t
  ad::Var reduced;     // c' x t
  ad::Var encoded;     // v_enc before normalization
  ad::Var normalized;  // signed sqrt + l2
  ad::Var v_clip;
  ad::Var phi_pre;     // W2 relu(v_clip) + b2
  ad::Var phi;
};

// Runs the encoder on an already sampled and concatenated c x t map.
ClipVars encode_on_tape(ad::Tape& tape, const EncoderModel& model, const BoundParams& params,
                        const FeatureMap& x);

// Sampling and concatenation as configured by the model.
FeatureMap prepare_input(const EncoderModel& model, const ClipFeatures& clip,
                         std::uint64_t rng_seed);

struct ClipEmbedding {
  std::vector<double> v_enc;   // normalized encoding
  std::vector<double> v_clip;
  std::vector<double> phi;     // elementwise >= 0
};

// Inference; throws std::runtime_error naming the stage if anything turns non-finite.
ClipEmbedding encode_clip(const EncoderModel& model, const ClipFeatures& clip,
                          std::uint64_t rng_seed);

}  // namespace tcbp
