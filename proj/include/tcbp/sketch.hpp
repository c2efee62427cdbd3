#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tcbp {

enum class SketchMode : std::uint8_t { CBP = 0, TCBP = 1 };

std::string_view to_string(SketchMode mode);

// A c x t matrix of per-segment features, row-major (row = channel,
// column = temporal segment).
template <typename T>
class BasicFeatureMap {
 public:
  BasicFeatureMap() = default;
  BasicFeatureMap(std::size_t channels, std::size_t segments);
  // Takes ownership of row-major data; rejects wrong sizes and non-finite entries.
  BasicFeatureMap(std::size_t channels, std::size_t segments, std::vector<T> data);

  std::size_t channels() const { return channels_; }
  std::size_t segments() const { return segments_; }

  T operator()(std::size_t c, std::size_t t) const { return data_[c * segments_ + t]; }
  T& operator()(std::size_t c, std::size_t t) { return data_[c * segments_ + t]; }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }

  std::vector<T> column(std::size_t t) const;

  // Throws std::runtime_error naming `stage` if any entry is NaN/Inf.
  void check_finite(std::string_view stage) const;

  bool operator==(const BasicFeatureMap&) const = default;

 private:
  std::size_t channels_ = 0;
  std::size_t segments_ = 0;
  std::vector<T> data_;
};

using FeatureMap = BasicFeatureMap<double>;

// The fixed random projections of a (temporal) tensor sketch.
//
// h1, h2 map each channel to a slot in [0, d) and never depend on time.
// s1, s2 hold +-1 signs: one per channel in CBP mode, one per
// (channel, segment) in TCBP mode, stored row-major c x t.
// Everything is regenerated bit-exactly from `seed`; the arrays are drawn in
// the order h1, h2, s1, s2 so that a TCBP sketch with t = 1 equals the CBP
// sketch of the same seed.
class SketchParams {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  static SketchParams generate(std::size_t channels, std::size_t segments, std::size_t dim,
                               std::uint64_t seed, SketchMode mode);

  // Explicit arrays, mainly for tests. Such params cannot be serialized
  // because they are not reproducible from a seed.
  static SketchParams from_arrays(SketchMode mode, std::size_t channels, std::size_t segments,
                                  std::size_t dim, std::vector<std::uint32_t> h1,
                                  std::vector<std::uint32_t> h2, std::vector<std::int8_t> s1,
                                  std::vector<std::int8_t> s2);

  SketchMode mode() const { return mode_; }
  std::size_t channels() const { return channels_; }
  std::size_t segments() const { return segments_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  std::span<const std::uint32_t> h1() const { return h1_; }
  std::span<const std::uint32_t> h2() const { return h2_; }
  std::span<const std::int8_t> s1() const { return s1_; }
  std::span<const std::int8_t> s2() const { return s2_; }

  // Number of sign entries per channel: t in TCBP mode, 1 in CBP mode.
  std::size_t sign_columns() const { return mode_ == SketchMode::TCBP ? segments_ : 1; }

  // Stored (h, s) element count: 2*2c for CBP, 2*(c + c*t) for TCBP.
  std::size_t parameter_count() const;

  // CRC-64 over h1, h2 (u32 LE) then s1, s2 (one byte each).
  std::uint64_t checksum() const;

  // "TCBPSKP" | version u32 | mode u8 | c,t,d u32 | seed u64 | checksum u64
  std::vector<std::uint8_t> serialize() const;
  static SketchParams deserialize(std::span<const std::uint8_t> blob,
                                  const std::string& what = "sketch params");

  bool operator==(const SketchParams& other) const;

 private:
  SketchParams() = default;
  void validate() const;

  SketchMode mode_ = SketchMode::CBP;
  std::size_t channels_ = 0;
  std::size_t segments_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  bool from_seed_ = false;
  std::vector<std::uint32_t> h1_, h2_;
  std::vector<std::int8_t> s1_, s2_;
};

// Count sketch: out[j] = sum_{i : h[i] = j} s[i] * x[i].
template <typename T>
std::vector<T> count_sketch(std::span<const T> x, std::span<const std::uint32_t> h,
                            std::span<const std::int8_t> s, std::size_t dim);

// out[k] = sum_j a[j] * b[(k - j) mod d], evaluated in the frequency domain.
template <typename T>
std::vector<T> circular_convolve(std::span<const T> a, std::span<const T> b);

// Tensor sketch of one vector: CS(x; h1, s1) circularly convolved with
// CS(x; h2, s2). Requires CBP-mode params.
template <typename T>
std::vector<T> tensor_sketch(std::span<const T> x, const SketchParams& params);

// Compact bilinear pooling: tensor sketch of each column, sum-pooled over
// the columns. Requires CBP-mode params with matching channel count.
template <typename T>
std::vector<T> cbp_encode(const BasicFeatureMap<T>& x, const SketchParams& params);

// Pre-convolution TCBP sketches u_k[j] = sum_{i : h_k[i] = j} sum_t s_k[i,t] x[i,t].
struct TcbpProjection {
  std::vector<double> u1;
  std::vector<double> u2;
};

template <typename T>
TcbpProjection tcbp_project(const BasicFeatureMap<T>& x, const SketchParams& params);

// Temporal compact bilinear pooling: circular convolution of the two
// projections above. Requires TCBP-mode params with matching c and t.
template <typename T>
std::vector<T> tcbp_encode(const BasicFeatureMap<T>& x, const SketchParams& params);

}  // namespace tcbp
