#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "tcbp/binary_io.hpp"
#include "tcbp/encoder.hpp"
#include "tcbp/random.hpp"

using namespace tcbp;

namespace {

ClipFeatures random_clip(Rng& rng, const std::vector<std::pair<Modality, std::size_t>>& mods,
                         std::size_t t_full, const std::string& id = "clip") {
  ClipFeatures clip{id, {}, t_full};
  for (const auto& [m, c] : mods) {
    std::vector<double> data(c * t_full);
    for (auto& v : data) v = rng.normal();
    clip.modalities.push_back({m, FeatureMap(c, t_full, std::move(data))});
  }
  return clip;
}

EncoderConfig small_config(EncodingMethod method, std::size_t t = 3, std::uint64_t seed = 7) {
  EncoderConfig cfg;
  cfg.modalities = {{Modality::A, 4}, {Modality::P, 6}, {Modality::I, 5}};
  cfg.method = method;
  cfg.segments = t;
  cfg.reduce_dim = 8;
  cfg.sketch_dim = 32;
  cfg.hidden_dim = 12;
  cfg.embed_dim = 6;
  cfg.seed = seed;
  return cfg;
}

std::vector<double> matvec(const ad::Tensor& w, const std::vector<double>& x) {
  std::vector<double> y(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) y[r] += w(r, c) * x[c];
  return y;
}

double norm(const std::vector<double>& v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

TEST(Modalities, ParseCanonicalOrder) {
  EXPECT_EQ(parse_modality_set("IPA"),
            (std::vector<Modality>{Modality::A, Modality::P, Modality::I}));
  EXPECT_EQ(modality_set_string(parse_modality_set("SRIPA")), "APIRS");
  EXPECT_THROW(parse_modality_set("AX"), std::invalid_argument);
  EXPECT_THROW(parse_modality_set("AA"), std::invalid_argument);
  EXPECT_THROW(parse_modality_set(""), std::invalid_argument);
}

TEST(Modalities, ReferenceChannels) {
  EXPECT_EQ(reference_channels(Modality::A), 256u);
  EXPECT_EQ(reference_channels(Modality::S), 300u);
  EXPECT_EQ(reference_channels(Modality::P), 2048u);
  EXPECT_EQ(reference_channels(Modality::I), 2048u);
  EXPECT_EQ(reference_channels(Modality::R), 2048u);
}

TEST(Sampling, DeterministicWindows) {
  EXPECT_EQ(segment_start(6, 3, Sampling::CFirst, 0), 0u);
  EXPECT_EQ(segment_start(6, 3, Sampling::CLast, 0), 3u);
  EXPECT_EQ(segment_start(3, 3, Sampling::CLast, 0), 0u);
}

TEST(Sampling, RandomStartIsUniform) {
  std::vector<int> counts(4, 0);
  const int n = 40000;
  for (int k = 0; k < n; ++k) ++counts[segment_start(6, 3, Sampling::Random, derive_seed(1, k))];
  double chi2 = 0;
  for (int c : counts) chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
  EXPECT_LT(chi2, 16.27);  // 3 dof, p = 0.001
}

TEST(Sampling, TooShortClipRejected) {
  try {
    segment_start(2, 3, Sampling::CLast, 0);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("clip too short"), std::string::npos);
  }
}

TEST(Sampling, WindowCopiesConsecutiveSegments) {
  Rng rng(1);
  const auto clip = random_clip(rng, {{Modality::A, 3}, {Modality::P, 2}}, 5);
  const auto w = sample_segments(clip, 3, Sampling::CLast, 0);
  ASSERT_EQ(w.t_full, 3u);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t c = 0; c < w.modalities[m].data.channels(); ++c)
      for (std::size_t k = 0; k < 3; ++k)
        EXPECT_EQ(w.modalities[m].data(c, k), clip.modalities[m].data(c, 2 + k));
}

TEST(Concat, StacksInRequestedOrder) {
  Rng rng(2);
  auto clip = random_clip(rng, {{Modality::I, 2}, {Modality::A, 3}}, 2);
  const std::vector<Modality> order{Modality::A, Modality::I};
  const auto x = concat_modalities(clip, order);
  ASSERT_EQ(x.channels(), 5u);
  EXPECT_EQ(x(0, 1), clip.find(Modality::A)->data(0, 1));
  EXPECT_EQ(x(3, 0), clip.find(Modality::I)->data(0, 0));

  const std::vector<Modality> missing{Modality::A, Modality::S};
  try {
    concat_modalities(clip, missing);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("missing modality S"), std::string::npos);
  }
}

TEST(ClipFeatures, TextMustRepeatAcrossSegments) {
  ClipFeatures clip{"c", {}, 2};
  clip.modalities.push_back({Modality::S, FeatureMap(2, 2, std::vector<double>{1, 2, 3, 3})});
  EXPECT_THROW(clip.validate(), std::invalid_argument);
  clip.modalities[0].data = FeatureMap(2, 2, std::vector<double>{1, 1, 3, 3});
  EXPECT_NO_THROW(clip.validate());
}

TEST(EncoderModel, InitializationRanges) {
  EncoderModel model(small_config(EncodingMethod::TCBP));
  for (const auto* p : model.params()) {
    if (p->decay) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p->value.cols));
      for (double v : p->value.data) EXPECT_LE(std::fabs(v), bound);
    } else {
      for (double v : p->value.data) EXPECT_EQ(v, 0.0);
    }
  }
  EXPECT_EQ(model.params().size(), 6u);
  EXPECT_EQ(model.params()[0]->name, "reduce.weight");
}

TEST(EncoderModel, SingleModalitySkipsReduction) {
  EncoderConfig cfg = small_config(EncodingMethod::TCBP);
  cfg.modalities = {{Modality::P, 6}};
  EncoderModel model(cfg);
  EXPECT_FALSE(model.reduces_channels());
  EXPECT_EQ(model.params().size(), 4u);
  EXPECT_EQ(model.sketch()->channels(), 6u);
  EXPECT_EQ(model.find_param("reduce.weight"), nullptr);
}

TEST(EncoderModel, EncodingDims) {
  EXPECT_EQ(EncoderModel(small_config(EncodingMethod::TCBP)).encoding_dim(), 32u);
  EXPECT_EQ(EncoderModel(small_config(EncodingMethod::CBP)).encoding_dim(), 32u);
  EXPECT_EQ(EncoderModel(small_config(EncodingMethod::MeanPool)).encoding_dim(), 8u);
  EXPECT_EQ(EncoderModel(small_config(EncodingMethod::ConcatT_MLP)).encoding_dim(), 24u);
  EXPECT_EQ(EncoderModel(small_config(EncodingMethod::MeanPool)).sketch(), nullptr);
}

TEST(EncoderModel, ReferenceHeads) {
  const std::vector<Modality> api{Modality::A, Modality::P, Modality::I};
  const auto tcbp_cfg = EncoderConfig::reference(api, EncodingMethod::TCBP);
  EXPECT_EQ(tcbp_cfg.sketch_dim, 8192u);
  EXPECT_EQ(tcbp_cfg.hidden_dim, 4096u);
  EXPECT_EQ(tcbp_cfg.embed_dim, 2048u);
  EXPECT_EQ(tcbp_cfg.input_channels(), 256u + 2048u + 2048u);
  const auto mp = EncoderConfig::reference(api, EncodingMethod::MeanPool);
  EXPECT_EQ(mp.hidden_dim, 2048u);
  EXPECT_EQ(mp.embed_dim, 1024u);
}

// The whole pipeline recomputed from the model's parameters with plain loops.
TEST(EncoderModel, TcbpPipelineMatchesManualComputation) {
  Rng rng(3);
  EncoderModel model(small_config(EncodingMethod::TCBP));
  for (auto* p : model.params())
    if (!p->decay)
      for (auto& v : p->value.data) v = 0.1 * rng.normal();
  const auto clip = random_clip(rng, {{Modality::A, 4}, {Modality::P, 6}, {Modality::I, 5}}, 4);
  const auto emb = encode_clip(model, clip, 0);

  // c_last window, concatenation, 1x1 reduction
  const auto x = prepare_input(model, clip, 0);
  const auto& rw = model.params()[0]->value;
  const auto& rb = model.params()[1]->value;
  FeatureMap reduced(8, 3);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto y = matvec(rw, x.column(t));
    for (std::size_t r = 0; r < 8; ++r) reduced(r, t) = y[r] + rb.data[r];
  }
  auto v = tcbp_encode(reduced, *model.sketch());
  for (auto& e : v) e = (e < 0 ? -1.0 : 1.0) * std::sqrt(std::fabs(e));
  const double n = norm(v);
  for (auto& e : v) e /= (n + 1e-12);
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(emb.v_enc[k], v[k], 1e-12);

  auto v_clip = matvec(model.params()[2]->value, v);
  for (std::size_t k = 0; k < v_clip.size(); ++k) v_clip[k] += model.params()[3]->value.data[k];
  for (std::size_t k = 0; k < v_clip.size(); ++k) EXPECT_NEAR(emb.v_clip[k], v_clip[k], 1e-12);
  for (auto& e : v_clip) e = std::max(0.0, e);
  auto phi = matvec(model.params()[4]->value, v_clip);
  for (std::size_t k = 0; k < phi.size(); ++k) {
    EXPECT_NEAR(emb.phi[k], std::fabs(phi[k] + model.params()[5]->value.data[k]), 1e-12);
  }
}

TEST(EncoderModel, OutputsNonnegativeAndNormalized) {
  Rng rng(4);
  for (auto method : {EncodingMethod::TCBP, EncodingMethod::CBP, EncodingMethod::MeanPool,
                      EncodingMethod::ConcatT_MLP}) {
    EncoderModel model(small_config(method));
    const auto clip = random_clip(rng, {{Modality::A, 4}, {Modality::P, 6}, {Modality::I, 5}}, 5);
    const auto emb = encode_clip(model, clip, 9);
    EXPECT_EQ(emb.phi.size(), 6u);
    for (double v : emb.phi) EXPECT_GE(v, 0.0);
    EXPECT_NEAR(norm(emb.v_enc), 1.0, 1e-9) << to_string(method);
  }
}

TEST(EncoderModel, ChannelPermutationChangesTcbpEmbedding) {
  Rng rng(5);
  EncoderConfig cfg = small_config(EncodingMethod::TCBP);
  cfg.modalities = {{Modality::P, 6}};
  EncoderModel model(cfg);
  const auto clip = random_clip(rng, {{Modality::P, 6}}, 3);
  auto permuted = clip;
  auto& d = permuted.modalities[0].data;
  for (std::size_t t = 0; t < 3; ++t) std::swap(d(0, t), d(4, t));
  const auto a = encode_clip(model, clip, 0).v_enc;
  const auto b = encode_clip(model, permuted, 0).v_enc;
  double diff = 0;
  for (std::size_t k = 0; k < a.size(); ++k) diff = std::max(diff, std::fabs(a[k] - b[k]));
  EXPECT_GT(diff, 1e-3);
}

TEST(EncoderModel, CbpAndTcbpAgreeAtOneSegment) {
  Rng rng(6);
  EncoderModel cbp(small_config(EncodingMethod::CBP, 1, 99));
  EncoderModel tcbp(small_config(EncodingMethod::TCBP, 1, 99));
  for (std::size_t k = 0; k < cbp.params().size(); ++k) {
    EXPECT_EQ(cbp.params()[k]->value, tcbp.params()[k]->value);
  }
  for (int rep = 0; rep < 5; ++rep) {
    const auto clip = random_clip(rng, {{Modality::A, 4}, {Modality::P, 6}, {Modality::I, 5}}, 4);
    const auto a = encode_clip(cbp, clip, 0);
    const auto b = encode_clip(tcbp, clip, 0);
    for (std::size_t k = 0; k < a.phi.size(); ++k) EXPECT_NEAR(a.phi[k], b.phi[k], 1e-12);
  }
}

TEST(EncoderModel, WrongChannelCountNamesModality) {
  Rng rng(7);
  EncoderModel model(small_config(EncodingMethod::TCBP));
  const auto clip = random_clip(rng, {{Modality::A, 4}, {Modality::P, 7}, {Modality::I, 5}}, 4);
  try {
    encode_clip(model, clip, 0);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("modality P"), std::string::npos);
  }
}

TEST(EncoderModel, NonFiniteStageIsNamed) {
  Rng rng(8);
  EncoderModel model(small_config(EncodingMethod::MeanPool));
  for (auto& v : model.find_param("w1.bias")->value.data) v = 1e300;
  for (auto& v : model.find_param("w2.weight")->value.data) v = 1e300;
  const auto clip = random_clip(rng, {{Modality::A, 4}, {Modality::P, 6}, {Modality::I, 5}}, 4);
  try {
    encode_clip(model, clip, 0);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("'w2'"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripPreservesEmbeddings) {
  Rng rng(9);
  EncoderModel model(small_config(EncodingMethod::TCBP));
  const auto path = std::filesystem::temp_directory_path() / "tcbp_test_model.ckpt";
  model.save(path);
  const auto loaded = EncoderModel::load(path);
  EXPECT_EQ(loaded.config().method, EncodingMethod::TCBP);
  EXPECT_TRUE(*loaded.sketch() == *model.sketch());
  const auto clip = random_clip(rng, {{Modality::A, 4}, {Modality::P, 6}, {Modality::I, 5}}, 4);
  const auto a = encode_clip(model, clip, 0).phi;
  const auto b = encode_clip(loaded, clip, 0).phi;
  // parameters are stored as float32
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5);
  // a second round trip is exact
  const auto again = EncoderModel::deserialize(loaded.serialize());
  for (std::size_t k = 0; k < loaded.params().size(); ++k) {
    EXPECT_EQ(again.params()[k]->value, loaded.params()[k]->value);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionDetected) {
  EncoderModel model(small_config(EncodingMethod::CBP));
  auto bytes = model.serialize();
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(EncoderModel::deserialize(bytes), FormatError);
  auto truncated = model.serialize();
  truncated.resize(40);
  EXPECT_THROW(EncoderModel::deserialize(truncated), FormatError);
  std::vector<std::uint8_t> junk{'n', 'o', 'p', 'e'};
  EXPECT_THROW(EncoderModel::deserialize(junk), FormatError);
}

TEST(EncoderConfig, Validation) {
  auto cfg = small_config(EncodingMethod::TCBP);
  cfg.segments = 0;
  EXPECT_THROW(EncoderModel{cfg}, std::invalid_argument);
  cfg = small_config(EncodingMethod::TCBP);
  cfg.modalities = {{Modality::P, 6}, {Modality::A, 4}};
  EXPECT_THROW(EncoderModel{cfg}, std::invalid_argument);
  EXPECT_THROW(parse_method("bilinear"), std::invalid_argument);
  EXPECT_EQ(parse_sampling("c_first"), Sampling::CFirst);
}

TEST(Concat, ReferenceModalitySizes) {
  Rng rng(40);
  auto mods = [](std::initializer_list<Modality> ms) {
    std::vector<std::pair<Modality, std::size_t>> out;
    for (auto m : ms) out.emplace_back(m, reference_channels(m));
    return out;
  };
  const auto api = random_clip(rng, mods({Modality::A, Modality::P, Modality::I}), 3);
  const std::vector<Modality> api_order{Modality::A, Modality::P, Modality::I};
  EXPECT_EQ(concat_modalities(api, api_order).channels(), 4352u);
  const auto apis = random_clip(rng, mods({Modality::A, Modality::P, Modality::I, Modality::S}), 3);
  const std::vector<Modality> apis_order{Modality::A, Modality::P, Modality::I, Modality::S};
  const auto x = concat_modalities(apis, apis_order);
  EXPECT_EQ(x.channels(), 4652u);
  EXPECT_EQ(x.segments(), 3u);
}

TEST(EncoderModel, ZeroFeaturesAndBiasesGiveZeroEmbedding) {
  EncoderModel model(small_config(EncodingMethod::TCBP));
  for (auto* p : model.params())
    if (!p->decay)
      for (auto& v : p->value.data) v = 0.0;
  ClipFeatures clip{"zero", {}, 4};
  for (auto [m, c] : {std::pair{Modality::A, 4}, {Modality::P, 6}, {Modality::I, 5}})
    clip.modalities.push_back({m, FeatureMap(c, 4)});
  const auto emb = encode_clip(model, clip, 0);
  for (double v : emb.v_enc) EXPECT_EQ(v, 0.0);
  for (double v : emb.phi) EXPECT_EQ(v, 0.0);
}

TEST(EncoderModel, IdenticalClipsGiveIdenticalEmbeddings) {
  Rng rng(41);
  EncoderModel model(small_config(EncodingMethod::TCBP));
  const auto clip = random_clip(rng, {{Modality::A, 4}, {Modality::P, 6}, {Modality::I, 5}}, 5);
  auto copy = clip;
  copy.clip_id = "other";
  EXPECT_EQ(encode_clip(model, clip, 1).phi, encode_clip(model, copy, 2).phi);
}
