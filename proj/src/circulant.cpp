#include "convnorm/circulant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace convnorm {
namespace {

struct Grid {
  std::size_t rows, cols;
};

Grid grid_of(const Tensor& t, const char* who) {
  if (t.rank() == 1) return {1, t.extent(0)};
  if (t.rank() == 2) return {t.extent(0), t.extent(1)};
  throw ArgumentError(std::string(who) + ": expected a rank-1 or rank-2 tensor, got shape " +
                      shape_string(t.shape()));
}

Shape shape_like(const Tensor& ref, Grid g) {
  return ref.rank() == 1 ? Shape{g.cols} : Shape{g.rows, g.cols};
}

std::size_t wrap(long long i, std::size_t n) {
  const auto m = static_cast<long long>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

}  // namespace

std::vector<double> DenseMatrix::multiply(std::span<const double> x) const {
  if (x.size() != cols) throw ArgumentError("matrix-vector size mismatch");
  std::vector<double> y(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += entries[i * cols + j] * x[j];
    y[i] = s;
  }
  return y;
}

Tensor cyclic_shift(const Tensor& v, long long shift) {
  if (v.rank() != 1) throw ArgumentError("cyclic_shift expects a 1D tensor");
  const std::size_t m = v.size();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = v[wrap(static_cast<long long>(i) - shift, m)];
  return Tensor(v.shape(), std::move(out));
}

DenseMatrix build_circulant(const Tensor& a, std::size_t m) {
  if (a.rank() != 1) throw ArgumentError("build_circulant(a, m) expects a 1D kernel");
  if (a.size() > m)
    throw ArgumentError("kernel length " + std::to_string(a.size()) + " exceeds signal length " +
                        std::to_string(m));
  DenseMatrix c(m, m);
  for (std::size_t col = 0; col < m; ++col)
    for (std::size_t j = 0; j < a.size(); ++j) c((j + col) % m, col) = a[j];
  return c;
}

DenseMatrix build_circulant(const Tensor& a, std::size_t rows, std::size_t cols) {
  const Grid k = grid_of(a, "build_circulant");
  if (k.rows > rows || k.cols > cols)
    throw ArgumentError("kernel " + shape_string(a.shape()) + " exceeds grid " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  const std::size_t n = rows * cols;
  DenseMatrix c(n, n);
  // Column (p, q) is the padded kernel cyclically shifted by (p, q).
  for (std::size_t p = 0; p < rows; ++p)
    for (std::size_t q = 0; q < cols; ++q)
      for (std::size_t i = 0; i < k.rows; ++i)
        for (std::size_t j = 0; j < k.cols; ++j)
          c(((i + p) % rows) * cols + (j + q) % cols, p * cols + q) = a[i * k.cols + j];
  return c;
}

Tensor circular_convolve(const Tensor& a, const Tensor& x, ConvMode mode) {
  if (a.size() == 0 || x.size() == 0) throw ArgumentError("circular_convolve: empty input");
  if (a.rank() != x.rank()) throw ArgumentError("circular_convolve: kernel and signal ranks differ");
  const Grid k = grid_of(a, "circular_convolve");
  const Grid g = grid_of(x, "circular_convolve");
  if (k.rows > g.rows || k.cols > g.cols)
    throw ArgumentError("circular_convolve: kernel " + shape_string(a.shape()) +
                        " exceeds signal " + shape_string(x.shape()));

  std::vector<double> out(g.rows * g.cols, 0.0);
  if (mode == ConvMode::direct) {
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k.rows; ++p)
          for (std::size_t q = 0; q < k.cols; ++q)
            s += a[p * k.cols + q] * x[((i + g.rows - p) % g.rows) * g.cols + (j + g.cols - q) % g.cols];
        out[i * g.cols + j] = s;
      }
  } else {
    auto spec = padded_spectrum(a.data(), k.rows, k.cols, g.rows, g.cols);
    std::vector<Complex> xs(x.data().begin(), x.data().end());
    fft2(xs, g.rows, g.cols, Direction::forward);
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] *= spec[i];
    fft2(xs, g.rows, g.cols, Direction::inverse);
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i].real();
  }
  return Tensor(shape_like(x, g), std::move(out));
}

Tensor linear_convolve_full(const Tensor& a, const Tensor& x) {
  if (a.rank() != x.rank()) throw ArgumentError("linear_convolve_full: ranks differ");
  const Grid k = grid_of(a, "linear_convolve_full");
  const Grid g = grid_of(x, "linear_convolve_full");
  const Grid o{k.rows + g.rows - 1, k.cols + g.cols - 1};
  std::vector<double> out(o.rows * o.cols, 0.0);
  // Gather in ascending signal order, the same order cross_correlate uses, so
  // the padded cross-correlation with the reversed kernel matches bit for bit.
  for (std::size_t r = 0; r < o.rows; ++r)
    for (std::size_t c = 0; c < o.cols; ++c) {
      double s = 0.0;
      const std::size_t i0 = r >= k.rows - 1 ? r - (k.rows - 1) : 0, i1 = std::min(r, g.rows - 1);
      const std::size_t j0 = c >= k.cols - 1 ? c - (k.cols - 1) : 0, j1 = std::min(c, g.cols - 1);
      for (std::size_t i = i0; i <= i1; ++i)
        for (std::size_t j = j0; j <= j1; ++j) s += a[(r - i) * k.cols + (c - j)] * x[i * g.cols + j];
      out[r * o.cols + c] = s;
    }
  return Tensor(shape_like(x, o), std::move(out));
}

Tensor cross_correlate(const Tensor& a, const Tensor& x, std::size_t pad) {
  const std::size_t pads[2] = {pad, pad};
  return cross_correlate(a, x, std::span<const std::size_t>(pads, x.rank() == 1 ? 1 : 2));
}

Tensor cross_correlate(const Tensor& a, const Tensor& x, std::span<const std::size_t> pads) {
  if (a.rank() != x.rank()) throw ArgumentError("cross_correlate: ranks differ");
  if (pads.size() != x.rank()) throw ArgumentError("cross_correlate: one pad amount per axis required");
  const Grid k = grid_of(a, "cross_correlate");
  const Grid g = grid_of(x, "cross_correlate");
  const std::size_t pad_r = x.rank() == 2 ? pads[0] : 0;
  const std::size_t pad_c = pads.back();
  const std::size_t eff_r = g.rows + 2 * pad_r, eff_c = g.cols + 2 * pad_c;
  if (eff_r < k.rows || eff_c < k.cols)
    throw ArgumentError("cross_correlate: padded signal shorter than kernel " + shape_string(a.shape()));

  const Grid o{eff_r - k.rows + 1, eff_c - k.cols + 1};
  std::vector<double> out(o.rows * o.cols, 0.0);
  for (std::size_t i = 0; i < o.rows; ++i)
    for (std::size_t j = 0; j < o.cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k.rows; ++p) {
        const auto r = static_cast<long long>(i + p) - static_cast<long long>(pad_r);
        if (r < 0 || r >= static_cast<long long>(g.rows)) continue;
        for (std::size_t q = 0; q < k.cols; ++q) {
          const auto c = static_cast<long long>(j + q) - static_cast<long long>(pad_c);
          if (c < 0 || c >= static_cast<long long>(g.cols)) continue;
          s += a[p * k.cols + q] * x[static_cast<std::size_t>(r) * g.cols + static_cast<std::size_t>(c)];
        }
      }
      out[i * o.cols + j] = s;
    }
  return Tensor(shape_like(x, o), std::move(out));
}

Tensor reverse_kernel(const Tensor& a) {
  const Grid k = grid_of(a, "reverse_kernel");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < k.rows; ++i)
    for (std::size_t j = 0; j < k.cols; ++j)
      out[(k.rows - 1 - i) * k.cols + (k.cols - 1 - j)] = a[i * k.cols + j];
  return Tensor(a.shape(), std::move(out));
}

double verify_circulant_decomposition(const Tensor& a, std::size_t m) {
  const DenseMatrix c = build_circulant(a, m);
  const auto spectrum = padded_spectrum(a.data(), 1, a.size(), 1, m);

  // Explicit unnormalized DFT matrix; F^{-1} = F^* / m.
  std::vector<Complex> f(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      f[i * m + j] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((i * j) % m) /
                                         static_cast<double>(m));

  double residual = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      Complex s = 0.0;
      for (std::size_t l = 0; l < m; ++l) s += std::conj(f[l * m + i]) * spectrum[l] * f[l * m + j];
      s /= static_cast<double>(m);
      residual = std::max(residual, std::abs(s - c(i, j)));
    }
  return residual;
}

}  // namespace convnorm
