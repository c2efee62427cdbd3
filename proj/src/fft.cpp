#include "tcbp/fft.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tcbp::fft {
namespace {

using cd = std::complex<double>;

void radix2(std::vector<cd>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  // Twiddles are taken from one table of the full length so each factor is
  // computed directly rather than by repeated multiplication.
  std::vector<cd> roots(n / 2);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n / 2; ++k) {
    roots[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                                   static_cast<double>(n));
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t stride = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cd u = a[i + k];
        const cd v = a[i + k + len / 2] * roots[k * stride];
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

void bluestein(std::vector<cd>& a, bool inverse) {
  const std::size_t n = a.size();
  const std::size_t m = std::bit_ceil(2 * n - 1);
  const double sign = inverse ? 1.0 : -1.0;

  // chirp[k] = exp(sign * i*pi*k^2/n); k^2 reduced mod 2n to keep the angle small.
  std::vector<cd> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto k2 = static_cast<unsigned long long>(k) * k % (2ull * n);
    chirp[k] = std::polar(1.0, sign * std::numbers::pi * static_cast<double>(k2) /
                                   static_cast<double>(n));
  }

  std::vector<cd> x(m), y(m);
  for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
  y[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);

  radix2(x, false);
  radix2(y, false);
  for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
  radix2(x, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * inv_m * chirp[k];
}

std::vector<cd> to_complex(std::span<const double> v) { return {v.begin(), v.end()}; }

}  // namespace

void transform(std::vector<cd>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("fft::transform: empty input");
  if (n == 1) return;
  if (std::has_single_bit(n)) {
    radix2(data, inverse);
  } else {
    bluestein(data, inverse);
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& z : data) z *= scale;
  }
}

std::vector<double> circular_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("circular_convolve: length mismatch");
  const std::size_t n = a.size();
  if (n == 0) throw std::invalid_argument("circular_convolve: empty input");
  if (n == 1) return {a[0] * b[0]};
  auto fa = to_complex(a);
  auto fb = to_complex(b);
  transform(fa, false);
  transform(fb, false);
  for (std::size_t k = 0; k < n; ++k) fa[k] *= fb[k];
  transform(fa, true);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = fa[k].real();
  return out;
}

std::vector<double> circular_correlate(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("circular_correlate: length mismatch");
  const std::size_t n = a.size();
  if (n == 0) throw std::invalid_argument("circular_correlate: empty input");
  if (n == 1) return {a[0] * b[0]};
  auto fa = to_complex(a);
  auto fb = to_complex(b);
  transform(fa, false);
  transform(fb, false);
  for (std::size_t k = 0; k < n; ++k) fa[k] *= std::conj(fb[k]);
  transform(fa, true);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = fa[k].real();
  return out;
}

}  // namespace tcbp::fft
