#include "pfv2/dct.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pfv2 {

namespace {

void check_trajectory(std::span<const double> x, const char* who) {
  if (x.empty()) throw std::invalid_argument(std::string(who) + ": empty trajectory");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw std::invalid_argument(std::string(who) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

// 0-based i, f; see the 1-based formula in the header.
double basis(std::size_t i, std::size_t f, std::size_t F) {
  const double norm = std::sqrt(2.0 / static_cast<double>(F)) * (i == 0 ? std::numbers::sqrt2 / 2.0 : 1.0);
  return norm * std::cos(std::numbers::pi * static_cast<double>(2 * f + 1) * static_cast<double>(i) /
                         (2.0 * static_cast<double>(F)));
}

}  // namespace

std::vector<double> dct_matrix(std::size_t length) {
  if (length == 0) throw std::invalid_argument("dct_matrix: length must be positive");
  std::vector<double> m(length * length);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t f = 0; f < length; ++f) m[i * length + f] = basis(i, f, length);
  return m;
}

DctSpectrum dct_forward(std::span<const double> x) {
  check_trajectory(x, "dct_forward");
  const std::size_t F = x.size();
  DctSpectrum out{std::vector<double>(F, 0.0), F};
  for (std::size_t i = 0; i < F; ++i) {
    double acc = 0.0;
    for (std::size_t f = 0; f < F; ++f) acc += x[f] * basis(i, f, F);
    out.coeffs[i] = acc;
  }
  return out;
}

std::vector<double> idct(std::span<const double> coeffs) {
  if (coeffs.empty()) throw std::invalid_argument("idct: empty spectrum");
  const std::size_t F = coeffs.size();
  std::vector<double> x(F, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < F; ++i) acc += coeffs[i] * basis(i, f, F);
    x[f] = acc;
  }
  return x;
}

std::vector<double> idct(const DctSpectrum& spectrum) { return idct(std::span<const double>(spectrum.coeffs)); }

DctSpectrum low_pass(const DctSpectrum& spectrum, std::size_t n) {
  const std::size_t F = spectrum.length();
  if (n < 1 || n > F) {
    throw std::out_of_range("low_pass: n = " + std::to_string(n) + " outside [1, " + std::to_string(F) + "]");
  }
  DctSpectrum out = spectrum;
  for (std::size_t i = n; i < F; ++i) out.coeffs[i] = 0.0;
  out.kept = n;
  return out;
}

double reconstruction_error(std::span<const double> x, std::size_t n) {
  check_trajectory(x, "reconstruction_error");
  if (n < 1 || n > x.size()) {
    throw std::out_of_range("reconstruction_error: n = " + std::to_string(n) + " outside [1, " +
                            std::to_string(x.size()) + "]");
  }
  const std::vector<double> rec = idct(low_pass(dct_forward(x), n));
  double acc = 0.0;
  for (std::size_t f = 0; f < x.size(); ++f) acc += (x[f] - rec[f]) * (x[f] - rec[f]);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

}  // namespace pfv2
