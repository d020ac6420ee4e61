#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pfv2 {

/// Orthonormal DCT-II coefficients of one trajectory.
///
/// Formulas are written 1-based (coefficient i, frame f, both in 1..F) and
/// stored 0-based: `coeffs[i - 1]` holds C_i.
struct DctSpectrum {
  std::vector<double> coeffs;
  /// Low-pass cutoff: coeffs[kept..] are zero. Equals coeffs.size() when unfiltered.
  std::size_t kept = 0;

  std::size_t length() const { return coeffs.size(); }
};

/// C_i = sqrt(2/F) * sum_f x_f * 1/sqrt(1 + [i == 1]) * cos(pi (2f - 1)(i - 1) / (2F)).
DctSpectrum dct_forward(std::span<const double> trajectory);

/// Inverse of `dct_forward`; the transform pair is orthonormal.
std::vector<double> idct(const DctSpectrum& spectrum);
std::vector<double> idct(std::span<const double> coeffs);

/// Keeps the first `n` coefficients and zeroes the rest. Requires 1 <= n <= F.
DctSpectrum low_pass(const DctSpectrum& spectrum, std::size_t n);

/// RMS difference between `trajectory` and its reconstruction from the first
/// `n` coefficients.
double reconstruction_error(std::span<const double> trajectory, std::size_t n);

/// Row-major F x F basis: entry (i, f) multiplies x_f to produce C_i, so
/// C = M x and x = M^T C.
std::vector<double> dct_matrix(std::size_t length);

}  // namespace pfv2
