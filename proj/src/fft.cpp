#include "convnorm/fft.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <memory>
#include <numbers>
#include <unordered_map>

namespace convnorm {

FreqGrid::FreqGrid(Shape s, std::vector<Complex> v) : shape(std::move(s)), values(std::move(v)) {
  if (shape.empty() || shape.size() > 2)
    throw ArgumentError("frequency grid must be rank 1 or 2, got shape " + shape_string(shape));
  if (shape_size(shape) != values.size())
    throw ArgumentError("frequency grid length does not match shape " + shape_string(shape));
}

Tensor FreqGrid::real_part() const {
  std::vector<double> out(values.size());
  std::ranges::transform(values, out.begin(), [](const Complex& c) { return c.real(); });
  return Tensor(shape, std::move(out));
}

Tensor FreqGrid::imag_part() const {
  std::vector<double> out(values.size());
  std::ranges::transform(values, out.begin(), [](const Complex& c) { return c.imag(); });
  return Tensor(shape, std::move(out));
}

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (n == 0) throw ArgumentError("FFT length must be positive");
  for (std::size_t rem = n, p = 2; rem > 1;) {
    if (p * p > rem) p = rem;
    if (rem % p == 0) {
      factors_.push_back(p);
      rem /= p;
    } else {
      ++p;
    }
  }
  twiddle_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    // Angle kept in [0, pi] by using the smaller of j and n - j.
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(std::min(j, n - j)) /
                         static_cast<double>(n);
    const double s = j <= n - j ? -std::sin(theta) : std::sin(theta);
    twiddle_[j] = Complex(std::cos(theta), s);
    if (4 * j == n) twiddle_[j] = Complex(0.0, -1.0);
    if (2 * j == n) twiddle_[j] = Complex(-1.0, 0.0);
    if (4 * j == 3 * n) twiddle_[j] = Complex(0.0, 1.0);
  }
  if (std::has_single_bit(n) && n > 1) {
    const int bits = std::countr_zero(n);
    bit_reverse_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      bit_reverse_[i] = r;
    }
  }
}

void FftPlan::inverse(std::span<Complex> data) const {
  run(data, true);
  const double scale = 1.0 / static_cast<double>(n_);
  for (auto& c : data) c *= scale;
}

void FftPlan::run(std::span<Complex> data, bool conjugate) const {
  if (data.size() != n_)
    throw ArgumentError("FFT plan of length " + std::to_string(n_) + " applied to " +
                        std::to_string(data.size()) + " values");
  if (n_ == 1) return;
  if (!bit_reverse_.empty()) {
    radix2(data, conjugate);
    return;
  }
  thread_local std::vector<Complex> out, scratch;
  out.resize(n_);
  scratch.resize(*std::ranges::max_element(factors_));
  recurse(data.data(), 1, out.data(), n_, 0, conjugate, scratch);
  std::ranges::copy(out, data.begin());
}

void FftPlan::radix2(std::span<Complex> a, bool conjugate) const {
  for (std::size_t i = 0; i < n_; ++i)
    if (i < bit_reverse_[i]) std::swap(a[i], a[bit_reverse_[i]]);
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2, step = n_ / len;
    for (std::size_t i = 0; i < n_; i += len)
      for (std::size_t j = 0; j < half; ++j) {
        const Complex w = conjugate ? std::conj(twiddle_[j * step]) : twiddle_[j * step];
        const Complex u = a[i + j];
        const Complex v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
  }
}

void FftPlan::recurse(const Complex* in, std::size_t stride, Complex* out, std::size_t len,
                      std::size_t level, bool conjugate, std::vector<Complex>& scratch) const {
  if (len == 1) {
    out[0] = in[0];
    return;
  }
  const std::size_t p = factors_[level];
  const std::size_t m = len / p;
  for (std::size_t r = 0; r < p; ++r)
    recurse(in + r * stride, stride * p, out + r * m, m, level + 1, conjugate, scratch);

  // Butterfly: X[k + m q] = sum_r W_len^{r (k + m q)} Y_r[k].
  const std::size_t step = n_ / len;
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t r = 0; r < p; ++r) scratch[r] = out[r * m + k];
    for (std::size_t q = 0; q < p; ++q) {
      const std::size_t idx = k + m * q;
      Complex sum = scratch[0];
      for (std::size_t r = 1; r < p; ++r) {
        const Complex w = twiddle_[(r * idx * step) % n_];
        sum += scratch[r] * (conjugate ? std::conj(w) : w);
      }
      out[idx] = sum;
    }
  }
}

const FftPlan& FftPlan::cached(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<FftPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan>(n);
  return *slot;
}

void fft2(std::span<Complex> data, std::size_t rows, std::size_t cols, Direction dir) {
  if (data.size() != rows * cols) throw ArgumentError("fft2: grid size mismatch");
  const auto& row_plan = FftPlan::cached(cols);
  const auto& col_plan = FftPlan::cached(rows);
  const bool inv = dir == Direction::inverse;
  for (std::size_t i = 0; i < rows; ++i) {
    auto row = data.subspan(i * cols, cols);
    inv ? row_plan.inverse(row) : row_plan.forward(row);
  }
  if (rows == 1) return;
  thread_local std::vector<Complex> column;
  column.resize(rows);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < rows; ++i) column[i] = data[i * cols + j];
    inv ? col_plan.inverse(column) : col_plan.forward(column);
    for (std::size_t i = 0; i < rows; ++i) data[i * cols + j] = column[i];
  }
}

FreqGrid dft(const Tensor& v) {
  if (v.rank() > 2) throw ArgumentError("dft expects a rank-1 or rank-2 tensor");
  std::vector<Complex> values(v.data().begin(), v.data().end());
  FreqGrid g(v.shape(), std::move(values));
  fft2(g.values, g.rows(), g.cols(), Direction::forward);
  return g;
}

FreqGrid dft(const FreqGrid& v, Direction dir) {
  FreqGrid g = v;
  fft2(g.values, g.rows(), g.cols(), dir);
  return g;
}

Tensor idft(const FreqGrid& v) { return dft(v, Direction::inverse).real_part(); }

std::vector<Complex> padded_spectrum(std::span<const double> kernel, std::size_t k1, std::size_t k2,
                                     std::size_t rows, std::size_t cols) {
  if (k1 > rows || k2 > cols)
    throw ArgumentError("kernel " + std::to_string(k1) + "x" + std::to_string(k2) +
                        " does not fit grid " + std::to_string(rows) + "x" + std::to_string(cols));
  std::vector<Complex> grid(rows * cols);
  for (std::size_t p = 0; p < k1; ++p)
    for (std::size_t q = 0; q < k2; ++q) grid[p * cols + q] = kernel[p * k2 + q];
  fft2(grid, rows, cols, Direction::forward);
  return grid;
}

}  // namespace convnorm
