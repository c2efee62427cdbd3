#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcbp/encoder.hpp"
#include "tcbp/ordering.hpp"

namespace tcbp {

// ---- feature files --------------------------------------------------------
//
// One modality of one clip:
//   "MMFE" | version u32 | modality u8 | c u32 | t_full u32 | dtype u8 (0 = f32)
//   | c*t_full float32, row-major | CRC-64 of all preceding bytes
// Integers and floats little-endian.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

std::vector<std::uint8_t> encode_feature_file(Modality modality, const FeatureMap& data);
ModalityFeature decode_feature_file(std::span<const std::uint8_t> bytes, const std::string& what);
void write_feature_file(const std::filesystem::path& path, Modality modality,
                        const FeatureMap& data);
ModalityFeature read_feature_file(const std::filesystem::path& path);

// ---- manifests --------------------------------------------------------------
//
// JSON lines, one scene per line, clips in ground-truth order:
//   {"scene_id": "...", "split": "train|val|test",
//    "clips": [{"clip_id": "...", "t_full": 4, "features": {"A": "rel/path.mmfe", ...}}]}
// Relative paths resolve against the manifest's directory.

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

// Lazy handle to one clip's feature files.
struct ClipRecord {
  std::string clip_id;
  std::size_t t_full = 0;
  std::map<Modality, std::filesystem::path> features;  // resolved paths

  // Reads and validates (CRC, t_full, text replication) the requested modalities.
  ClipFeatures load(std::span<const Modality> modalities) const;
};

struct SceneRecord {
  std::string scene_id;
  Split split = Split::Train;
  std::vector<ClipRecord> clips;

  Scene scene() const;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<SceneRecord> scenes;

  std::vector<const SceneRecord*> split(Split s) const;
  std::map<std::size_t, std::size_t> size_histogram(Split s) const;
};

// Parses and validates a manifest: JSON syntax, 2..6 clips per scene, unique
// scene and clip ids across splits, referenced files present. Feature payloads
// are not read here. Errors name the line number.
Dataset load_manifest(const std::filesystem::path& path);

std::string manifest_line(const SceneRecord& scene, const std::filesystem::path& root);

// Scene with every clip's features in memory.
struct LoadedScene {
  Scene scene;
  std::vector<ClipFeatures> clips;  // ground-truth order
};

// Loads all scenes of one split. Channel counts must agree across clips for
// each modality; they are returned in `channels`.
std::vector<LoadedScene> load_split(const Dataset& dataset, Split split,
                                    std::span<const Modality> modalities,
                                    std::map<Modality, std::size_t>* channels = nullptr);

// ---- synthetic data -------------------------------------------------------

// Desk-scale stand-in for movie scenes: clip k of an M-clip scene carries
// noise + signal_strength * (k / M) * u_m in every segment of modality m,
// with u_m a fixed N(0, 1) direction per modality. signal_strength = 0 gives
// an unlearnable (chance-level) task.
struct SynthConfig {
  std::map<Split, std::size_t> scenes_per_split{
      {Split::Train, 2000}, {Split::Val, 500}, {Split::Test, 500}};
  // Scene size -> proportion. Default: validation-split proportions of the
  // reference movie dataset (958/472/203/100/51 scenes of 2..6 clips).
  std::map<std::size_t, double> size_histogram{
      {2, 958.0}, {3, 472.0}, {4, 203.0}, {5, 100.0}, {6, 51.0}};
  std::map<Modality, std::size_t> channels{
      {Modality::A, 16}, {Modality::P, 32}, {Modality::I, 32}};
  // Segments per clip -> proportion; about 65% of clips have 4 segments.
  std::map<std::size_t, double> t_full_histogram{{4, 0.65}, {5, 0.20}, {6, 0.15}};
  double signal_strength = 5.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  // Normalizes histograms and checks ranges.
  void validate();
};

// Exact per-size scene counts for n scenes (largest-remainder rounding).
std::map<std::size_t, std::size_t> allocate_scene_sizes(
    const std::map<std::size_t, double>& proportions, std::size_t n);

struct SynthSummary {
  std::filesystem::path manifest;
  std::map<Split, std::map<std::size_t, std::size_t>> histograms;
  std::size_t clips = 0;
};

// Writes feature files under out_dir/features and out_dir/manifest.jsonl.
SynthSummary generate_synthetic(SynthConfig config, const std::filesystem::path& out_dir);

}  // namespace tcbp
