#pragma once

#include <complex>
#include <span>
#include <vector>

namespace tcbp::fft {

// In-place discrete Fourier transform of any length n >= 1.
// Powers of two use iterative radix-2; every other length goes through
// Bluestein's chirp-z reduction to a padded power-of-two transform.
// The inverse transform includes the 1/n scaling.
void transform(std::vector<std::complex<double>>& data, bool inverse);

// out[k] = sum_j a[j] * b[(k - j) mod n]
std::vector<double> circular_convolve(std::span<const double> a, std::span<const double> b);

// out[j] = sum_k a[k] * b[(k - j) mod n]; the adjoint of convolution with b.
std::vector<double> circular_correlate(std::span<const double> a, std::span<const double> b);

}  // namespace tcbp::fft
