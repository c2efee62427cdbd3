#include "tcbp/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tcbp/binary_io.hpp"
#include "tcbp/random.hpp"

namespace tcbp {

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kTags[kModalityCount] = {'A', 'P', 'I', 'R', 'S'};
}  // namespace

char modality_tag(Modality m) { return kTags[static_cast<std::size_t>(m)]; }

std::optional<Modality> modality_from_tag(char tag) {
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (kTags[k] == tag) return static_cast<Modality>(k);
  }
  return std::nullopt;
}

std::vector<Modality> parse_modality_set(std::string_view tags) {
  if (tags.empty()) throw std::invalid_argument("modality set is empty");
  std::vector<Modality> out;
  for (char ch : tags) {
    auto m = modality_from_tag(ch);
    if (!m) throw std::invalid_argument(std::string("unknown modality '") + ch + "'");
    if (std::find(out.begin(), out.end(), *m) != out.end()) {
      throw std::invalid_argument(std::string("modality '") + ch + "' listed twice");
    }
    out.push_back(*m);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string modality_set_string(std::span<const Modality> set) {
  std::string s;
  for (auto m : set) s.push_back(modality_tag(m));
  return s;
}

std::size_t reference_channels(Modality m) {
  switch (m) {
    case Modality::A: return 256;
    case Modality::S: return 300;
    default: return 2048;
  }
}

const ModalityFeature* ClipFeatures::find(Modality m) const {
  for (const auto& f : modalities) {
    if (f.modality == m) return &f;
  }
  return nullptr;
}

void ClipFeatures::validate() const {
  if (t_full == 0) throw std::invalid_argument("clip " + clip_id + ": t_full must be positive");
  for (std::size_t a = 0; a < modalities.size(); ++a) {
    const auto& f = modalities[a];
    for (std::size_t b = a + 1; b < modalities.size(); ++b) {
      if (modalities[b].modality == f.modality) {
        throw std::invalid_argument("clip " + clip_id + ": modality " +
                                    modality_tag(f.modality) + " appears twice");
      }
    }
    if (f.data.segments() != t_full) {
      throw std::invalid_argument("clip " + clip_id + ": modality " + modality_tag(f.modality) +
                                  " has " + std::to_string(f.data.segments()) +
                                  " segments, expected " + std::to_string(t_full));
    }
    if (f.modality == Modality::S) {
      for (std::size_t c = 0; c < f.data.channels(); ++c) {
        for (std::size_t t = 1; t < t_full; ++t) {
          if (f.data(c, t) != f.data(c, 0)) {
            throw std::invalid_argument("clip " + clip_id +
                                        ": text features must be identical across segments");
          }
        }
      }
    }
  }
}

std::string_view to_string(EncodingMethod m) {
  switch (m) {
    case EncodingMethod::TCBP: return "tcbp";
    case EncodingMethod::CBP: return "cbp";
    case EncodingMethod::MeanPool: return "meanpool";
    case EncodingMethod::ConcatT_MLP: return "concat";
  }
  return "?";
}

std::string_view to_string(Sampling s) {
  switch (s) {
    case Sampling::Random: return "random";
    case Sampling::CFirst: return "c_first";
    case Sampling::CLast: return "c_last";
  }
  return "?";
}

EncodingMethod parse_method(std::string_view name) {
  for (auto m : {EncodingMethod::TCBP, EncodingMethod::CBP, EncodingMethod::MeanPool,
                 EncodingMethod::ConcatT_MLP}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown encoding method '" + std::string(name) + "'");
}

Sampling parse_sampling(std::string_view name) {
  for (auto s : {Sampling::Random, Sampling::CFirst, Sampling::CLast}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown sampling strategy '" + std::string(name) + "'");
}

std::size_t segment_start(std::size_t t_full, std::size_t t, Sampling strategy,
                          std::uint64_t seed) {
  if (t == 0) throw std::invalid_argument("sample_segments: t must be positive");
  if (t_full < t) {
    throw std::invalid_argument("clip too short: " + std::to_string(t_full) +
                                " segments, need " + std::to_string(t));
  }
  switch (strategy) {
    case Sampling::CFirst: return 0;
    case Sampling::CLast: return t_full - t;
    case Sampling::Random: {
      Rng rng(seed);
      return static_cast<std::size_t>(rng.uniform_index(t_full - t + 1));
    }
  }
  return 0;
}

ClipFeatures sample_segments(const ClipFeatures& clip, std::size_t t, Sampling strategy,
                             std::uint64_t seed) {
  const std::size_t start = segment_start(clip.t_full, t, strategy, seed);
  ClipFeatures out{clip.clip_id, {}, t};
  out.modalities.reserve(clip.modalities.size());
  for (const auto& f : clip.modalities) {
    FeatureMap window(f.data.channels(), t);
    for (std::size_t c = 0; c < f.data.channels(); ++c) {
      for (std::size_t k = 0; k < t; ++k) window(c, k) = f.data(c, start + k);
    }
    out.modalities.push_back({f.modality, std::move(window)});
  }
  return out;
}

FeatureMap concat_modalities(const ClipFeatures& clip, std::span<const Modality> order) {
  if (order.empty()) throw std::invalid_argument("concat_modalities: no modalities requested");
  std::size_t channels = 0;
  std::vector<const ModalityFeature*> parts;
  for (auto m : order) {
    const auto* f = clip.find(m);
    if (!f) {
      throw std::invalid_argument("clip " + clip.clip_id + ": missing modality " +
                                  modality_tag(m));
    }
    if (f->data.segments() != clip.t_full) {
      throw std::invalid_argument("clip " + clip.clip_id + ": segment count mismatch in " +
                                  modality_tag(m));
    }
    channels += f->data.channels();
    parts.push_back(f);
  }
  FeatureMap out(channels, clip.t_full);
  std::size_t row = 0;
  for (const auto* f : parts) {
    const auto src = f->data.data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(row * clip.t_full));
    row += f->data.channels();
  }
  return out;
}

// ------------------------------------------------------------- EncoderConfig

EncoderConfig EncoderConfig::reference(std::span<const Modality> set, EncodingMethod method) {
  EncoderConfig cfg;
  for (auto m : set) cfg.modalities.emplace_back(m, reference_channels(m));
  std::sort(cfg.modalities.begin(), cfg.modalities.end());
  cfg.method = method;
  if (method == EncodingMethod::MeanPool) {
    cfg.hidden_dim = 2048;
    cfg.embed_dim = 1024;
  }
  return cfg;
}

std::vector<Modality> EncoderConfig::modality_order() const {
  std::vector<Modality> out;
  for (const auto& [m, c] : modalities) out.push_back(m);
  return out;
}

std::size_t EncoderConfig::input_channels() const {
  std::size_t c = 0;
  for (const auto& [m, ch] : modalities) c += ch;
  return c;
}

void EncoderConfig::validate() const {
  if (modalities.empty()) throw std::invalid_argument("EncoderConfig: no modalities");
  for (std::size_t k = 0; k < modalities.size(); ++k) {
    if (modalities[k].second == 0) {
      throw std::invalid_argument("EncoderConfig: zero channels for modality " +
                                  std::string(1, modality_tag(modalities[k].first)));
    }
    if (k > 0 && !(modalities[k - 1].first < modalities[k].first)) {
      throw std::invalid_argument("EncoderConfig: modalities must be distinct, in A,P,I,R,S order");
    }
  }
  if (segments == 0 || reduce_dim == 0 || sketch_dim == 0 || hidden_dim == 0 || embed_dim == 0) {
    throw std::invalid_argument("EncoderConfig: all dimensions must be positive");
  }
}

// -------------------------------------------------------------- EncoderModel

namespace {

ad::Tensor uniform_weights(Rng& rng, std::size_t rows, std::size_t cols) {
  ad::Tensor w(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  for (auto& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

}  // namespace

EncoderModel::EncoderModel(EncoderConfig config) : EncoderModel(std::move(config), true) {}

EncoderModel::EncoderModel(EncoderConfig config, bool init_params) : config_(std::move(config)) {
  config_.validate();
  const std::size_t c_in = config_.input_channels();
  const std::size_t c_enc = encoded_channels();

  if (config_.method == EncodingMethod::TCBP || config_.method == EncodingMethod::CBP) {
    const auto mode =
        config_.method == EncodingMethod::TCBP ? SketchMode::TCBP : SketchMode::CBP;
    sketch_ = SketchParams::generate(c_enc, config_.segments, config_.sketch_dim,
                                     derive_seed(config_.seed, 1), mode);
  }

  Rng rng(derive_seed(config_.seed, 2));
  auto weights = [&](std::size_t rows, std::size_t cols) {
    return init_params ? uniform_weights(rng, rows, cols) : ad::Tensor(rows, cols);
  };
  if (reduces_channels()) {
    reduce_w_.emplace("reduce.weight", weights(config_.reduce_dim, c_in), true);
    reduce_b_.emplace("reduce.bias", ad::Tensor(config_.reduce_dim, 1), false);
  }
  w1_ = Param("w1.weight", weights(config_.hidden_dim, encoding_dim()), true);
  b1_ = Param("w1.bias", ad::Tensor(config_.hidden_dim, 1), false);
  w2_ = Param("w2.weight", weights(config_.embed_dim, config_.hidden_dim), true);
  b2_ = Param("w2.bias", ad::Tensor(config_.embed_dim, 1), false);
}

std::size_t EncoderModel::encoded_channels() const {
  return reduces_channels() ? config_.reduce_dim : config_.input_channels();
}

std::size_t EncoderModel::encoding_dim() const {
  switch (config_.method) {
    case EncodingMethod::TCBP:
    case EncodingMethod::CBP: return config_.sketch_dim;
    case EncodingMethod::MeanPool: return encoded_channels();
    case EncodingMethod::ConcatT_MLP: return encoded_channels() * config_.segments;
  }
  return 0;
}

std::vector<Param*> EncoderModel::params() {
  std::vector<Param*> out;
  if (reduce_w_) {
    out.push_back(&*reduce_w_);
    out.push_back(&*reduce_b_);
  }
  for (auto* p : {&w1_, &b1_, &w2_, &b2_}) out.push_back(p);
  return out;
}

std::vector<const Param*> EncoderModel::params() const {
  auto mutable_ptrs = const_cast<EncoderModel*>(this)->params();
  return {mutable_ptrs.begin(), mutable_ptrs.end()};
}

Param* EncoderModel::find_param(std::string_view name) {
  for (auto* p : params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::vector<std::uint8_t> EncoderModel::serialize() const {
  ByteWriter w;
  w.put_bytes("TCBPMDL");
  w.put_u32(kCheckpointVersion);
  w.put_u8(static_cast<std::uint8_t>(config_.method));
  w.put_u8(static_cast<std::uint8_t>(config_.sampling));
  w.put_u32(static_cast<std::uint32_t>(config_.segments));
  w.put_u8(static_cast<std::uint8_t>(config_.modalities.size()));
  for (const auto& [m, c] : config_.modalities) {
    w.put_u8(static_cast<std::uint8_t>(m));
    w.put_u32(static_cast<std::uint32_t>(c));
  }
  w.put_u32(static_cast<std::uint32_t>(reduces_channels() ? config_.reduce_dim : 0));
  w.put_u32(static_cast<std::uint32_t>(config_.reduce_dim));
  w.put_u32(static_cast<std::uint32_t>(config_.sketch_dim));
  w.put_u32(static_cast<std::uint32_t>(config_.hidden_dim));
  w.put_u32(static_cast<std::uint32_t>(config_.embed_dim));
  w.put_u64(config_.seed);
  if (sketch_) {
    const auto blob = sketch_->serialize();
    w.put_u32(static_cast<std::uint32_t>(blob.size()));
    w.put_bytes(std::string_view(reinterpret_cast<const char*>(blob.data()), blob.size()));
  } else {
    w.put_u32(0);
  }
  const auto ps = params();
  w.put_u32(static_cast<std::uint32_t>(ps.size()));
  for (const auto* p : ps) {
    w.put_u16(static_cast<std::uint16_t>(p->name.size()));
    w.put_bytes(p->name);
    w.put_u32(static_cast<std::uint32_t>(p->value.rows));
    w.put_u32(static_cast<std::uint32_t>(p->value.cols));
    for (double v : p->value.data) w.put_f32(static_cast<float>(v));
  }
  w.put_crc();
  return w.take();
}

EncoderModel EncoderModel::deserialize(std::span<const std::uint8_t> bytes, const std::string& what) {
  ByteReader r(bytes, what);
  r.expect_magic("TCBPMDL");
  const auto version = r.get_u32();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported checkpoint version " + std::to_string(version));
  }
  EncoderConfig cfg;
  const auto method = r.get_u8();
  const auto sampling = r.get_u8();
  if (method > 3 || sampling > 2) throw FormatError(what + ": bad method or sampling byte");
  cfg.method = static_cast<EncodingMethod>(method);
  cfg.sampling = static_cast<Sampling>(sampling);
  cfg.segments = r.get_u32();
  const auto n_mod = r.get_u8();
  for (std::uint8_t k = 0; k < n_mod; ++k) {
    const auto tag = r.get_u8();
    if (tag >= kModalityCount) throw FormatError(what + ": bad modality tag");
    cfg.modalities.emplace_back(static_cast<Modality>(tag), r.get_u32());
  }
  r.get_u32();  // effective reduction width, informational
  cfg.reduce_dim = r.get_u32();
  cfg.sketch_dim = r.get_u32();
  cfg.hidden_dim = r.get_u32();
  cfg.embed_dim = r.get_u32();
  cfg.seed = r.get_u64();
  const auto sketch_len = r.get_u32();
  std::optional<SketchParams> stored_sketch;
  if (sketch_len > 0) stored_sketch = SketchParams::deserialize(r.get_span(sketch_len), what);

  auto model = [&] {
    try {
      return EncoderModel(std::move(cfg), false);
    } catch (const std::invalid_argument& e) {
      throw FormatError(what + ": " + e.what());
    }
  }();
  if (stored_sketch.has_value() != model.sketch_.has_value() ||
      (stored_sketch && !(*stored_sketch == *model.sketch_))) {
    throw FormatError(what + ": stored sketch does not match the model configuration");
  }

  const auto n_params = r.get_u32();
  auto ps = model.params();
  if (n_params != ps.size()) throw FormatError(what + ": unexpected parameter count");
  for (auto* p : ps) {
    const auto name = r.get_string(r.get_u16());
    const std::size_t rows = r.get_u32();
    const std::size_t cols = r.get_u32();
    if (name != p->name || rows != p->value.rows || cols != p->value.cols) {
      throw FormatError(what + ": parameter " + name + " does not match " + p->name + " " +
                        p->value.shape_string());
    }
    for (auto& v : p->value.data) v = static_cast<double>(r.get_f32());
  }
  r.verify_crc();
  r.expect_end();
  return model;
}

void EncoderModel::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path), path.string());
}

// ------------------------------------------------------------------- forward

BoundParams bind_trainable(ad::Tape& tape, EncoderModel& model) {
  BoundParams b;
  auto ps = model.params();
  std::size_t k = 0;
  if (model.reduces_channels()) {
    b.reduce_w = tape.param(*ps[k++]);
    b.reduce_b = tape.param(*ps[k++]);
  }
  b.w1 = tape.param(*ps[k++]);
  b.b1 = tape.param(*ps[k++]);
  b.w2 = tape.param(*ps[k++]);
  b.b2 = tape.param(*ps[k++]);
  return b;
}

BoundParams bind_frozen(ad::Tape& tape, const EncoderModel& model) {
  BoundParams b;
  auto ps = model.params();
  std::size_t k = 0;
  if (model.reduces_channels()) {
    b.reduce_w = tape.frozen(ps[k++]->value);
    b.reduce_b = tape.frozen(ps[k++]->value);
  }
  b.w1 = tape.frozen(ps[k++]->value);
  b.b1 = tape.frozen(ps[k++]->value);
  b.w2 = tape.frozen(ps[k++]->value);
  b.b2 = tape.frozen(ps[k++]->value);
  return b;
}

ClipVars encode_on_tape(ad::Tape& tape, const EncoderModel& model, const BoundParams& params,
                        const FeatureMap& x) {
  const auto& cfg = model.config();
  if (x.channels() != cfg.input_channels() || x.segments() != cfg.segments) {
    throw std::invalid_argument("encoder: input is " + std::to_string(x.channels()) + "x" +
                                std::to_string(x.segments()) + ", model expects " +
                                std::to_string(cfg.input_channels()) + "x" +
                                std::to_string(cfg.segments));
  }
  ClipVars v;
  v.input = tape.input(ad::Tensor(x.channels(), x.segments(),
                                  std::vector<double>(x.data().begin(), x.data().end())));
  v.reduced = v.input;
  if (model.reduces_channels()) {
    v.reduced = ad::add_bias(tape, ad::matmul(tape, params.reduce_w, v.input), params.reduce_b);
  }
  switch (cfg.method) {
    case EncodingMethod::TCBP: v.encoded = ad::tcbp(tape, v.reduced, *model.sketch()); break;
    case EncodingMethod::CBP: v.encoded = ad::cbp(tape, v.reduced, *model.sketch()); break;
    case EncodingMethod::MeanPool:
      v.encoded = ad::scale(tape, ad::sum_pool(tape, v.reduced),
                            1.0 / static_cast<double>(cfg.segments));
      break;
    case EncodingMethod::ConcatT_MLP: v.encoded = ad::flatten_columns(tape, v.reduced); break;
  }
  v.normalized = ad::l2_normalize(tape, ad::signed_sqrt(tape, v.encoded));
  v.v_clip = ad::add_bias(tape, ad::matmul(tape, params.w1, v.normalized), params.b1);
  v.phi_pre = ad::add_bias(tape, ad::matmul(tape, params.w2, ad::relu(tape, v.v_clip)), params.b2);
  v.phi = ad::abs(tape, v.phi_pre);
  return v;
}

FeatureMap prepare_input(const EncoderModel& model, const ClipFeatures& clip,
                         std::uint64_t rng_seed) {
  const auto& cfg = model.config();
  for (const auto& [m, c] : cfg.modalities) {
    const auto* f = clip.find(m);
    if (!f) {
      throw std::invalid_argument("clip " + clip.clip_id + ": missing modality " +
                                  modality_tag(m));
    }
    if (f->data.channels() != c) {
      throw std::invalid_argument("clip " + clip.clip_id + ": modality " + modality_tag(m) +
                                  " has " + std::to_string(f->data.channels()) +
                                  " channels, model expects " + std::to_string(c));
    }
  }
  const auto window = sample_segments(clip, cfg.segments, cfg.sampling, rng_seed);
  const auto order = cfg.modality_order();
  return concat_modalities(window, order);
}

namespace {

void check_stage(const ad::Tape& tape, ad::Var v, const char* stage, const std::string& clip) {
  for (double x : tape.value(v).data) {
    if (!std::isfinite(x)) {
      throw std::runtime_error("clip " + clip + ": non-finite value after stage '" + stage + "'");
    }
  }
}

}  // namespace

ClipEmbedding encode_clip(const EncoderModel& model, const ClipFeatures& clip,
                          std::uint64_t rng_seed) {
  const auto x = prepare_input(model, clip, rng_seed);
  x.check_finite("clip " + clip.clip_id + " input");
  ad::Tape tape;
  const auto bound = bind_frozen(tape, model);
  const auto v = encode_on_tape(tape, model, bound, x);
  check_stage(tape, v.reduced, "reduce", clip.clip_id);
  check_stage(tape, v.encoded, "encode", clip.clip_id);
  check_stage(tape, v.normalized, "normalize", clip.clip_id);
  check_stage(tape, v.v_clip, "w1", clip.clip_id);
  check_stage(tape, v.phi, "w2", clip.clip_id);
  return {tape.value(v.normalized).data, tape.value(v.v_clip).data, tape.value(v.phi).data};
}

}  // namespace tcbp
