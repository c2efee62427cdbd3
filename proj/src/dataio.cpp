#include "tcbp/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "tcbp/binary_io.hpp"
#include "tcbp/random.hpp"

namespace tcbp {

namespace fs = std::filesystem;
using nlohmann::json;

// -------------------------------------------------------------- feature files

std::vector<std::uint8_t> encode_feature_file(Modality modality, const FeatureMap& data) {
  ByteWriter w;
  w.put_bytes("MMFE");
  w.put_u32(kFeatureFileVersion);
  w.put_u8(static_cast<std::uint8_t>(modality));
  w.put_u32(static_cast<std::uint32_t>(data.channels()));
  w.put_u32(static_cast<std::uint32_t>(data.segments()));
  w.put_u8(0);
  for (double v : data.data()) w.put_f32(static_cast<float>(v));
  w.put_crc();
  return w.take();
}

ModalityFeature decode_feature_file(std::span<const std::uint8_t> bytes, const std::string& what) {
  ByteReader r(bytes, what);
  r.expect_magic("MMFE");
  const auto version = r.get_u32();
  if (version != kFeatureFileVersion) {
    throw FormatError(what + ": unsupported feature file version " + std::to_string(version));
  }
  const auto tag = r.get_u8();
  if (tag >= kModalityCount) throw FormatError(what + ": bad modality tag " + std::to_string(tag));
  const std::size_t c = r.get_u32();
  const std::size_t t = r.get_u32();
  const auto dtype = r.get_u8();
  if (dtype != 0) throw FormatError(what + ": unsupported dtype " + std::to_string(dtype));
  if (c == 0 || t == 0) throw FormatError(what + ": zero dimension");
  if (r.remaining() != 4 * c * t + 8) {
    throw FormatError(what + ": payload is " + std::to_string(r.remaining() - 8) +
                      " bytes, expected " + std::to_string(4 * c * t));
  }
  std::vector<double> values(c * t);
  for (auto& v : values) v = static_cast<double>(r.get_f32());
  r.verify_crc();
  r.expect_end();
  try {
    return {static_cast<Modality>(tag), FeatureMap(c, t, std::move(values))};
  } catch (const std::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

void write_feature_file(const fs::path& path, Modality modality, const FeatureMap& data) {
  write_file_bytes(path, encode_feature_file(modality, data));
}

ModalityFeature read_feature_file(const fs::path& path) {
  return decode_feature_file(read_file_bytes(path), path.string());
}

// ------------------------------------------------------------------ manifest

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (auto s : {Split::Train, Split::Val, Split::Test}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

ClipFeatures ClipRecord::load(std::span<const Modality> modalities) const {
  ClipFeatures clip{clip_id, {}, t_full};
  for (auto m : modalities) {
    auto it = features.find(m);
    if (it == features.end()) {
      throw std::runtime_error("clip " + clip_id + ": no features for modality " +
                               modality_tag(m));
    }
    auto f = read_feature_file(it->second);
    if (f.modality != m) {
      throw FormatError(it->second.string() + ": file holds modality " +
                        modality_tag(f.modality) + ", manifest says " + modality_tag(m));
    }
    if (f.data.segments() != t_full) {
      throw FormatError(it->second.string() + ": " + std::to_string(f.data.segments()) +
                        " segments, manifest declares t_full = " + std::to_string(t_full));
    }
    clip.modalities.push_back(std::move(f));
  }
  clip.validate();
  return clip;
}

Scene SceneRecord::scene() const {
  Scene s{scene_id, {}};
  for (const auto& c : clips) s.clip_ids.push_back(c.clip_id);
  return s;
}

std::vector<const SceneRecord*> Dataset::split(Split s) const {
  std::vector<const SceneRecord*> out;
  for (const auto& sc : scenes) {
    if (sc.split == s) out.push_back(&sc);
  }
  return out;
}

std::map<std::size_t, std::size_t> Dataset::size_histogram(Split s) const {
  std::map<std::size_t, std::size_t> h;
  for (const auto* sc : split(s)) ++h[sc->clips.size()];
  return h;
}

namespace {

[[noreturn]] void manifest_error(const fs::path& path, std::size_t line, const std::string& msg) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

Dataset load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  Dataset ds;
  ds.root = path.parent_path();
  std::set<std::string> scene_ids, clip_ids;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      manifest_error(path, line_no, std::string("malformed JSON: ") + e.what());
    }
    try {
      SceneRecord sc;
      sc.scene_id = j.at("scene_id").get<std::string>();
      sc.split = parse_split(j.at("split").get<std::string>());
      for (const auto& jc : j.at("clips")) {
        ClipRecord c;
        c.clip_id = jc.at("clip_id").get<std::string>();
        c.t_full = jc.at("t_full").get<std::size_t>();
        if (c.t_full == 0) manifest_error(path, line_no, "clip " + c.clip_id + ": t_full is 0");
        for (const auto& [tag, rel] : jc.at("features").items()) {
          if (tag.size() != 1 || !modality_from_tag(tag[0])) {
            manifest_error(path, line_no, "unknown modality tag '" + tag + "'");
          }
          fs::path p = rel.get<std::string>();
          if (p.is_relative()) p = ds.root / p;
          if (!fs::exists(p)) manifest_error(path, line_no, "missing feature file " + p.string());
          c.features[*modality_from_tag(tag[0])] = std::move(p);
        }
        if (!clip_ids.insert(c.clip_id).second) {
          manifest_error(path, line_no, "duplicate clip id " + c.clip_id);
        }
        sc.clips.push_back(std::move(c));
      }
      try {
        sc.scene().validate();
      } catch (const std::invalid_argument& e) {
        manifest_error(path, line_no, e.what());
      }
      if (!scene_ids.insert(sc.scene_id).second) {
        manifest_error(path, line_no, "duplicate scene id " + sc.scene_id);
      }
      ds.scenes.push_back(std::move(sc));
    } catch (const json::exception& e) {
      manifest_error(path, line_no, std::string("bad scene record: ") + e.what());
    } catch (const std::invalid_argument& e) {
      manifest_error(path, line_no, e.what());
    }
  }
  return ds;
}

std::string manifest_line(const SceneRecord& scene, const fs::path& root) {
  json j;
  j["scene_id"] = scene.scene_id;
  j["split"] = std::string(to_string(scene.split));
  j["clips"] = json::array();
  for (const auto& c : scene.clips) {
    json jc;
    jc["clip_id"] = c.clip_id;
    jc["t_full"] = c.t_full;
    json feats = json::object();
    for (const auto& [m, p] : c.features) {
      feats[std::string(1, modality_tag(m))] = p.lexically_relative(root).generic_string();
    }
    jc["features"] = std::move(feats);
    j["clips"].push_back(std::move(jc));
  }
  return j.dump();
}

std::vector<LoadedScene> load_split(const Dataset& dataset, Split split,
                                    std::span<const Modality> modalities,
                                    std::map<Modality, std::size_t>* channels) {
  std::map<Modality, std::size_t> seen;
  std::vector<LoadedScene> out;
  for (const auto* sc : dataset.split(split)) {
    LoadedScene ls{sc->scene(), {}};
    for (const auto& rec : sc->clips) {
      auto clip = rec.load(modalities);
      for (const auto& f : clip.modalities) {
        auto [it, fresh] = seen.emplace(f.modality, f.data.channels());
        if (!fresh && it->second != f.data.channels()) {
          throw FormatError("clip " + clip.clip_id + ": modality " + modality_tag(f.modality) +
                            " has " + std::to_string(f.data.channels()) + " channels, expected " +
                            std::to_string(it->second));
        }
      }
      ls.clips.push_back(std::move(clip));
    }
    out.push_back(std::move(ls));
  }
  if (channels) *channels = seen;
  return out;
}

// ------------------------------------------------------------ synthetic data

namespace {

std::map<std::size_t, double> normalized(const std::map<std::size_t, double>& h, const char* what) {
  double total = 0.0;
  for (const auto& [k, v] : h) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) + ": negative or non-finite weight");
    }
    total += v;
  }
  if (!(total > 0.0)) throw std::invalid_argument(std::string(what) + ": empty histogram");
  std::map<std::size_t, double> out;
  for (const auto& [k, v] : h) out[k] = v / total;
  return out;
}

std::size_t draw_from(const std::map<std::size_t, double>& probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (const auto& [k, p] : probs) {
    acc += p;
    if (u < acc) return k;
  }
  return probs.rbegin()->first;
}

}  // namespace

void SynthConfig::validate() {
  size_histogram = normalized(size_histogram, "scene size histogram");
  for (const auto& [size, p] : size_histogram) {
    if (size < kMinSceneClips || size > kMaxSceneClips) {
      throw std::invalid_argument("scene size " + std::to_string(size) + " outside 2..6");
    }
  }
  t_full_histogram = normalized(t_full_histogram, "segment histogram");
  for (const auto& [t, p] : t_full_histogram) {
    if (t == 0) throw std::invalid_argument("segment count must be positive");
  }
  if (channels.empty()) throw std::invalid_argument("no modalities configured");
  for (const auto& [m, c] : channels) {
    if (c == 0) throw std::invalid_argument("zero channels for a modality");
  }
  if (!(signal_strength >= 0.0)) throw std::invalid_argument("signal_strength must be >= 0");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
}

std::map<std::size_t, std::size_t> allocate_scene_sizes(
    const std::map<std::size_t, double>& proportions, std::size_t n) {
  const auto probs = normalized(proportions, "scene size histogram");
  std::map<std::size_t, std::size_t> counts;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (const auto& [size, p] : probs) {
    const double exact = p * static_cast<double>(n);
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    counts[size] = whole;
    assigned += whole;
    remainders.emplace_back(exact - static_cast<double>(whole), size);
  }
  // Largest remainder first; ties go to the smaller scene size.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[remainders[k].second];
  return counts;
}

SynthSummary generate_synthetic(SynthConfig config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir / "features");

  std::map<Modality, std::vector<double>> directions;
  for (const auto& [m, c] : config.channels) {
    Rng rng(derive_seed(config.seed, 100 + static_cast<std::uint64_t>(m)));
    std::vector<double> u(c);
    for (auto& v : u) v = rng.normal();
    directions[m] = std::move(u);
  }

  SynthSummary summary;
  summary.manifest = out_dir / "manifest.jsonl";
  std::ofstream manifest(summary.manifest, std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + summary.manifest.string());

  for (const auto& [split, n_scenes] : config.scenes_per_split) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(split)));
    const auto counts = allocate_scene_sizes(config.size_histogram, n_scenes);
    std::vector<std::size_t> sizes;
    for (const auto& [size, count] : counts) sizes.insert(sizes.end(), count, size);
    rng.shuffle(std::span(sizes));

    for (std::size_t s = 0; s < sizes.size(); ++s) {
      const std::size_t m_clips = sizes[s];
      SceneRecord sc;
      std::ostringstream sid;
      sid << to_string(split) << "_" << s;
      sc.scene_id = sid.str();
      sc.split = split;
      for (std::size_t k = 0; k < m_clips; ++k) {
        ClipRecord rec;
        rec.clip_id = sc.scene_id + "_c" + std::to_string(k);
        rec.t_full = draw_from(config.t_full_histogram, rng);
        const double code =
            config.signal_strength * static_cast<double>(k) / static_cast<double>(m_clips);
        for (const auto& [m, c] : config.channels) {
          const auto& u = directions[m];
          FeatureMap map(c, rec.t_full);
          // Text-like features are one vector replicated over all segments.
          const std::size_t distinct_cols = m == Modality::S ? 1 : rec.t_full;
          for (std::size_t t = 0; t < distinct_cols; ++t) {
            for (std::size_t i = 0; i < c; ++i) {
              map(i, t) = config.noise_std * rng.normal() + code * u[i];
            }
          }
          for (std::size_t t = distinct_cols; t < rec.t_full; ++t) {
            for (std::size_t i = 0; i < c; ++i) map(i, t) = map(i, 0);
          }
          const auto file = out_dir / "features" /
                            (rec.clip_id + "." + std::string(1, modality_tag(m)) + ".mmfe");
          write_feature_file(file, m, map);
          rec.features[m] = file;
        }
        sc.clips.push_back(std::move(rec));
        ++summary.clips;
      }
      manifest << manifest_line(sc, out_dir) << '\n';
      ++summary.histograms[split][m_clips];
    }
  }
  if (!manifest) throw std::runtime_error("write failed for " + summary.manifest.string());
  return summary;
}

}  // namespace tcbp
