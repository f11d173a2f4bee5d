#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "convnorm/fft.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm {

/// Row-major dense real matrix. Only materialized for verification.
struct DenseMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> entries;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), entries(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return entries[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return entries[i * cols + j]; }

  std::vector<double> multiply(std::span<const double> x) const;
};

enum class ConvMode { direct, fft };

/// s_l[v]: output index i holds v[(i - l) mod m].
Tensor cyclic_shift(const Tensor& v, long long shift);

/// m x m circulant whose column k is the zero-padded kernel shifted by k.
DenseMatrix build_circulant(const Tensor& a, std::size_t m);
/// Doubly block-circulant (rows*cols)^2 matrix acting on row-major grids.
DenseMatrix build_circulant(const Tensor& a, std::size_t rows, std::size_t cols);

/// Circular convolution of a (zero-padded to x's extents) with x.
/// Rank 1 or 2; a must not exceed x along any axis.
Tensor circular_convolve(const Tensor& a, const Tensor& x, ConvMode mode = ConvMode::fft);

/// Full linear convolution, output extent n + m - 1 per axis.
Tensor linear_convolve_full(const Tensor& a, const Tensor& x);

/// Sliding inner product with the unflipped kernel, stride 1, after padding x
/// with `pad` zeros on both sides of every axis.
Tensor cross_correlate(const Tensor& a, const Tensor& x, std::size_t pad);
/// Per-axis padding variant: pads[axis] zeros on both sides of that axis.
Tensor cross_correlate(const Tensor& a, const Tensor& x, std::span<const std::size_t> pads);

/// Kernel reversed along every axis (plain reversal, not cyclic).
Tensor reverse_kernel(const Tensor& a);

/// max |C_a - F^{-1} diag(F a) F| over all entries, for a 1D kernel padded to m.
double verify_circulant_decomposition(const Tensor& a, std::size_t m);

}  // namespace convnorm
