#pragma once

// Reference implementations used only by the tests: direct O(n^2) sums with
// no shared code paths with the library's FFT or circulant routines.

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using cd = std::complex<double>;

// Unnormalized 2D DFT by direct summation (rows = 1 for 1D).
inline std::vector<cd> dft2(const std::vector<cd>& x, std::size_t rows, std::size_t cols, bool inverse = false) {
  std::vector<cd> out(rows * cols);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t u = 0; u < rows; ++u)
    for (std::size_t v = 0; v < cols; ++v) {
      cd acc = 0;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
          const double ph = 2.0 * std::numbers::pi *
                            (static_cast<double>(u * i % rows) / static_cast<double>(rows) +
                             static_cast<double>(v * j % cols) / static_cast<double>(cols));
          acc += x[i * cols + j] * cd(std::cos(ph), sign * std::sin(ph));
        }
      out[u * cols + v] = inverse ? acc / static_cast<double>(rows * cols) : acc;
    }
  return out;
}

inline std::vector<cd> dft_real(const std::vector<double>& x, std::size_t rows, std::size_t cols) {
  return dft2(std::vector<cd>(x.begin(), x.end()), rows, cols);
}

// Kernel of extent (k1, k2) zero-padded at the end to (rows, cols).
inline std::vector<double> pad_to(const std::vector<double>& a, std::size_t k1, std::size_t k2, std::size_t rows,
                                  std::size_t cols) {
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < k1; ++i)
    for (std::size_t j = 0; j < k2; ++j) out[i * cols + j] = a[i * k2 + j];
  return out;
}

// y[r, c] = sum_{i, j} a[i, j] x[(r - i) mod R, (c - j) mod C].
inline std::vector<double> circular(const std::vector<double>& a, std::size_t k1, std::size_t k2,
                                    const std::vector<double>& x, std::size_t rows, std::size_t cols) {
  std::vector<double> y(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t i = 0; i < k1; ++i)
        for (std::size_t j = 0; j < k2; ++j)
          y[r * cols + c] += a[i * k2 + j] * x[((r + rows - i % rows) % rows) * cols + (c + cols - j % cols) % cols];
  return y;
}

inline std::vector<double> gaussian(std::size_t n, unsigned seed, double scale = 1.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

inline double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
