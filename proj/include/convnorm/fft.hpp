#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "convnorm/tensor.hpp"

namespace convnorm {

using Complex = std::complex<double>;

enum class Direction { forward, inverse };

/// Complex grid over the spatial extents of a rank-1 or rank-2 signal.
/// Holds hatted quantities: kernel spectra, preconditioner spectra.
struct FreqGrid {
  Shape shape;
  std::vector<Complex> values;

  FreqGrid() = default;
  FreqGrid(Shape s, std::vector<Complex> v);

  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.back(); }
  std::size_t size() const { return values.size(); }
  const Complex& operator[](std::size_t i) const { return values[i]; }
  Complex& operator[](std::size_t i) { return values[i]; }

  Tensor real_part() const;
  Tensor imag_part() const;
};

/// Mixed-radix FFT for one length. Factors the length into primes and runs a
/// recursive decimation in time; prime factors fall back to a direct sum.
/// Powers of two take an iterative radix-2 path.
/// Forward is unnormalized, inverse is scaled by 1/n.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const noexcept { return n_; }
  void forward(std::span<Complex> data) const { run(data, false); }
  void inverse(std::span<Complex> data) const;

  /// Cached plan for length n, one cache per thread.
  static const FftPlan& cached(std::size_t n);

 private:
  void run(std::span<Complex> data, bool conjugate) const;
  void radix2(std::span<Complex> data, bool conjugate) const;
  void recurse(const Complex* in, std::size_t stride, Complex* out, std::size_t len,
               std::size_t level, bool conjugate, std::vector<Complex>& scratch) const;

  std::size_t n_;
  std::vector<std::size_t> factors_;
  std::vector<Complex> twiddle_;  // exp(-2 pi i j / n)
  std::vector<std::size_t> bit_reverse_;  // only for powers of two
};

/// In-place 2D transform of a row-major rows x cols grid (rows first, then columns).
void fft2(std::span<Complex> data, std::size_t rows, std::size_t cols, Direction dir);

/// Unnormalized forward DFT of a real rank-1 or rank-2 tensor.
FreqGrid dft(const Tensor& v);
/// Complex transform in either direction; inverse includes the 1/n factor.
FreqGrid dft(const FreqGrid& v, Direction dir);
/// Inverse transform returning the real part (imaginary round-off discarded).
Tensor idft(const FreqGrid& v);

/// Spectrum of a k1 x k2 kernel zero-padded (at the end of each axis) to rows x cols.
std::vector<Complex> padded_spectrum(std::span<const double> kernel, std::size_t k1, std::size_t k2,
                                     std::size_t rows, std::size_t cols);

}  // namespace convnorm
