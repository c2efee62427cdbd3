#include "tcbp/sketch.hpp"

#include <cmath>
#include <stdexcept>

#include "tcbp/binary_io.hpp"
#include "tcbp/fft.hpp"
#include "tcbp/random.hpp"

namespace tcbp {

std::string_view to_string(SketchMode mode) { return mode == SketchMode::CBP ? "cbp" : "tcbp"; }

// ---------------------------------------------------------------- FeatureMap

template <typename T>
BasicFeatureMap<T>::BasicFeatureMap(std::size_t channels, std::size_t segments)
    : channels_(channels), segments_(segments), data_(channels * segments, T(0)) {
  if (channels == 0 || segments == 0) {
    throw std::invalid_argument("FeatureMap: channels and segments must be positive");
  }
}

template <typename T>
BasicFeatureMap<T>::BasicFeatureMap(std::size_t channels, std::size_t segments, std::vector<T> data)
    : channels_(channels), segments_(segments), data_(std::move(data)) {
  if (channels == 0 || segments == 0) {
    throw std::invalid_argument("FeatureMap: channels and segments must be positive");
  }
  if (data_.size() != channels * segments) {
    throw std::invalid_argument("FeatureMap: expected " + std::to_string(channels * segments) +
                                " values, got " + std::to_string(data_.size()));
  }
  check_finite("FeatureMap");
}

template <typename T>
std::vector<T> BasicFeatureMap<T>::column(std::size_t t) const {
  if (t >= segments_) throw std::out_of_range("FeatureMap::column: segment out of range");
  std::vector<T> out(channels_);
  for (std::size_t c = 0; c < channels_; ++c) out[c] = (*this)(c, t);
  return out;
}

template <typename T>
void BasicFeatureMap<T>::check_finite(std::string_view stage) const {
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k])) {
      throw std::runtime_error(std::string(stage) + ": non-finite value at channel " +
                               std::to_string(k / segments_) + ", segment " +
                               std::to_string(k % segments_));
    }
  }
}

template class BasicFeatureMap<float>;
template class BasicFeatureMap<double>;

// -------------------------------------------------------------- SketchParams

SketchParams SketchParams::generate(std::size_t channels, std::size_t segments, std::size_t dim,
                                    std::uint64_t seed, SketchMode mode) {
  if (channels == 0 || segments == 0 || dim == 0) {
    throw std::invalid_argument("SketchParams: c, t and d must all be >= 1");
  }
  if (dim > 0xFFFFFFFFull || channels > 0xFFFFFFFFull || segments > 0xFFFFFFFFull) {
    throw std::invalid_argument("SketchParams: dimension exceeds 32 bits");
  }
  SketchParams p;
  p.mode_ = mode;
  p.channels_ = channels;
  p.segments_ = segments;
  p.dim_ = dim;
  p.seed_ = seed;
  p.from_seed_ = true;

  Rng rng(seed);
  auto draw_h = [&] {
    std::vector<std::uint32_t> h(channels);
    for (auto& v : h) v = static_cast<std::uint32_t>(rng.uniform_index(dim));
    return h;
  };
  auto draw_s = [&](std::size_t n) {
    std::vector<std::int8_t> s(n);
    for (auto& v : s) v = static_cast<std::int8_t>(rng.sign());
    return s;
  };
  p.h1_ = draw_h();
  p.h2_ = draw_h();
  const std::size_t n_signs = channels * p.sign_columns();
  p.s1_ = draw_s(n_signs);
  p.s2_ = draw_s(n_signs);
  return p;
}

SketchParams SketchParams::from_arrays(SketchMode mode, std::size_t channels,
                                       std::size_t segments, std::size_t dim,
                                       std::vector<std::uint32_t> h1,
                                       std::vector<std::uint32_t> h2,
                                       std::vector<std::int8_t> s1,
                                       std::vector<std::int8_t> s2) {
  SketchParams p;
  p.mode_ = mode;
  p.channels_ = channels;
  p.segments_ = segments;
  p.dim_ = dim;
  p.h1_ = std::move(h1);
  p.h2_ = std::move(h2);
  p.s1_ = std::move(s1);
  p.s2_ = std::move(s2);
  p.validate();
  return p;
}

void SketchParams::validate() const {
  if (channels_ == 0 || segments_ == 0 || dim_ == 0) {
    throw std::invalid_argument("SketchParams: c, t and d must all be >= 1");
  }
  const std::size_t n_signs = channels_ * sign_columns();
  if (h1_.size() != channels_ || h2_.size() != channels_ || s1_.size() != n_signs ||
      s2_.size() != n_signs) {
    throw std::invalid_argument("SketchParams: array lengths do not match c and t");
  }
  for (auto h : {std::span(h1_), std::span(h2_)}) {
    for (auto v : h) {
      if (v >= dim_) throw std::invalid_argument("SketchParams: hash index out of [0, d)");
    }
  }
  for (auto s : {std::span(s1_), std::span(s2_)}) {
    for (auto v : s) {
      if (v != 1 && v != -1) throw std::invalid_argument("SketchParams: sign not in {-1, +1}");
    }
  }
}

std::size_t SketchParams::parameter_count() const {
  return h1_.size() + h2_.size() + s1_.size() + s2_.size();
}

std::uint64_t SketchParams::checksum() const {
  ByteWriter w;
  for (auto v : h1_) w.put_u32(v);
  for (auto v : h2_) w.put_u32(v);
  for (auto v : s1_) w.put_u8(static_cast<std::uint8_t>(v));
  for (auto v : s2_) w.put_u8(static_cast<std::uint8_t>(v));
  return crc64(w.bytes());
}

std::vector<std::uint8_t> SketchParams::serialize() const {
  if (!from_seed_) {
    throw std::logic_error("SketchParams: explicit-array params are not reproducible from a seed");
  }
  ByteWriter w;
  w.put_bytes("TCBPSKP");
  w.put_u32(kFormatVersion);
  w.put_u8(static_cast<std::uint8_t>(mode_));
  w.put_u32(static_cast<std::uint32_t>(channels_));
  w.put_u32(static_cast<std::uint32_t>(segments_));
  w.put_u32(static_cast<std::uint32_t>(dim_));
  w.put_u64(seed_);
  w.put_u64(checksum());
  return w.take();
}

SketchParams SketchParams::deserialize(std::span<const std::uint8_t> blob, const std::string& what) {
  ByteReader r(blob, what);
  r.expect_magic("TCBPSKP");
  const auto version = r.get_u32();
  if (version != kFormatVersion) {
    throw FormatError(what + ": unsupported sketch version " + std::to_string(version));
  }
  const auto mode_byte = r.get_u8();
  if (mode_byte > 1) throw FormatError(what + ": unknown sketch mode " + std::to_string(mode_byte));
  const std::size_t c = r.get_u32();
  const std::size_t t = r.get_u32();
  const std::size_t d = r.get_u32();
  const std::uint64_t seed = r.get_u64();
  const std::uint64_t stored = r.get_u64();
  r.expect_end();
  if (c == 0 || t == 0 || d == 0) throw FormatError(what + ": zero dimension");
  auto p = generate(c, t, d, seed, static_cast<SketchMode>(mode_byte));
  if (p.checksum() != stored) {
    throw FormatError(what + ": regenerated (h, s) do not match stored checksum");
  }
  return p;
}

bool SketchParams::operator==(const SketchParams& o) const {
  return mode_ == o.mode_ && channels_ == o.channels_ && segments_ == o.segments_ &&
         dim_ == o.dim_ && h1_ == o.h1_ && h2_ == o.h2_ && s1_ == o.s1_ && s2_ == o.s2_;
}

// ---------------------------------------------------------------- operations

namespace {

template <typename T>
std::vector<T> narrow(const std::vector<double>& v) {
  if constexpr (std::is_same_v<T, double>) {
    return v;
  } else {
    return std::vector<T>(v.begin(), v.end());
  }
}

std::vector<double> count_sketch_d(auto x, std::span<const std::uint32_t> h,
                                   std::span<const std::int8_t> s, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[h[i]] += static_cast<double>(s[i]) * static_cast<double>(x[i]);
  }
  return out;
}

void require_mode(const SketchParams& p, SketchMode mode, const char* op) {
  if (p.mode() != mode) {
    throw std::invalid_argument(std::string(op) + ": sketch params are in " +
                                std::string(to_string(p.mode())) + " mode");
  }
}

}  // namespace

template <typename T>
std::vector<T> count_sketch(std::span<const T> x, std::span<const std::uint32_t> h,
                            std::span<const std::int8_t> s, std::size_t dim) {
  if (x.size() != h.size() || x.size() != s.size()) {
    throw std::invalid_argument("count_sketch: x, h and s must have equal length");
  }
  if (dim == 0) throw std::invalid_argument("count_sketch: d must be >= 1");
  for (auto j : h) {
    if (j >= dim) throw std::invalid_argument("count_sketch: hash index out of [0, d)");
  }
  return narrow<T>(count_sketch_d(x, h, s, dim));
}

template <typename T>
std::vector<T> circular_convolve(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw std::invalid_argument("circular_convolve: length mismatch");
  if (a.empty()) throw std::invalid_argument("circular_convolve: empty input");
  if constexpr (std::is_same_v<T, double>) {
    return fft::circular_convolve(a, b);
  } else {
    std::vector<double> ad(a.begin(), a.end()), bd(b.begin(), b.end());
    return narrow<T>(fft::circular_convolve(ad, bd));
  }
}

template <typename T>
std::vector<T> tensor_sketch(std::span<const T> x, const SketchParams& p) {
  require_mode(p, SketchMode::CBP, "tensor_sketch");
  if (x.size() != p.channels()) {
    throw std::invalid_argument("tensor_sketch: input length " + std::to_string(x.size()) +
                                " != sketch channels " + std::to_string(p.channels()));
  }
  const auto u1 = count_sketch_d(x, p.h1(), p.s1(), p.dim());
  const auto u2 = count_sketch_d(x, p.h2(), p.s2(), p.dim());
  return narrow<T>(fft::circular_convolve(u1, u2));
}

template <typename T>
std::vector<T> cbp_encode(const BasicFeatureMap<T>& x, const SketchParams& p) {
  require_mode(p, SketchMode::CBP, "cbp_encode");
  if (x.channels() != p.channels()) {
    throw std::invalid_argument("cbp_encode: feature map has " + std::to_string(x.channels()) +
                                " channels, sketch expects " + std::to_string(p.channels()));
  }
  std::vector<double> acc(p.dim(), 0.0);
  std::vector<double> col(x.channels());
  for (std::size_t t = 0; t < x.segments(); ++t) {
    for (std::size_t c = 0; c < x.channels(); ++c) col[c] = static_cast<double>(x(c, t));
    const auto u1 = count_sketch_d(std::span<const double>(col), p.h1(), p.s1(), p.dim());
    const auto u2 = count_sketch_d(std::span<const double>(col), p.h2(), p.s2(), p.dim());
    const auto v = fft::circular_convolve(u1, u2);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
  }
  return narrow<T>(acc);
}

template <typename T>
TcbpProjection tcbp_project(const BasicFeatureMap<T>& x, const SketchParams& p) {
  require_mode(p, SketchMode::TCBP, "tcbp_encode");
  if (x.channels() != p.channels() || x.segments() != p.segments()) {
    throw std::invalid_argument("tcbp_encode: feature map is " + std::to_string(x.channels()) +
                                "x" + std::to_string(x.segments()) + ", sketch expects " +
                                std::to_string(p.channels()) + "x" +
                                std::to_string(p.segments()));
  }
  const std::size_t t_count = x.segments();
  TcbpProjection out{std::vector<double>(p.dim(), 0.0), std::vector<double>(p.dim(), 0.0)};
  const auto h1 = p.h1();
  const auto h2 = p.h2();
  const auto s1 = p.s1();
  const auto s2 = p.s2();
  for (std::size_t i = 0; i < x.channels(); ++i) {
    double a1 = 0.0;
    double a2 = 0.0;
    for (std::size_t t = 0; t < t_count; ++t) {
      const double v = static_cast<double>(x(i, t));
      a1 += static_cast<double>(s1[i * t_count + t]) * v;
      a2 += static_cast<double>(s2[i * t_count + t]) * v;
    }
    out.u1[h1[i]] += a1;
    out.u2[h2[i]] += a2;
  }
  return out;
}

template <typename T>
std::vector<T> tcbp_encode(const BasicFeatureMap<T>& x, const SketchParams& p) {
  const auto proj = tcbp_project(x, p);
  // Empty sum-pool so that t = 1 goes through the same accumulation as CBP.
  std::vector<double> acc(p.dim(), 0.0);
  const auto v = fft::circular_convolve(proj.u1, proj.u2);
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
  return narrow<T>(acc);
}

#define TCBP_INSTANTIATE(T)                                                                       \
  template std::vector<T> count_sketch<T>(std::span<const T>, std::span<const std::uint32_t>,    \
                                          std::span<const std::int8_t>, std::size_t);            \
  template std::vector<T> circular_convolve<T>(std::span<const T>, std::span<const T>);          \
  template std::vector<T> tensor_sketch<T>(std::span<const T>, const SketchParams&);             \
  template std::vector<T> cbp_encode<T>(const BasicFeatureMap<T>&, const SketchParams&);         \
  template TcbpProjection tcbp_project<T>(const BasicFeatureMap<T>&, const SketchParams&);       \
  template std::vector<T> tcbp_encode<T>(const BasicFeatureMap<T>&, const SketchParams&);

TCBP_INSTANTIATE(float)
TCBP_INSTANTIATE(double)

#undef TCBP_INSTANTIATE

}  // namespace tcbp
