#include "convnorm/convnorm.hpp"

#include "convnorm/circulant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace convnorm {
namespace {

// Relative floor below which a channel gain counts as a spectral zero.
constexpr double kSingularFloor = 1e-14;

void check_fits(const KernelStack& kernels, SpatialExtent extent, const char* who) {
  if (extent.height < kernels.k1() || extent.width < kernels.k2())
    throw ArgumentError(std::string(who) + ": spatial extent " + std::to_string(extent.height) + "x" +
                        std::to_string(extent.width) + " smaller than kernel " +
                        std::to_string(kernels.k1()) + "x" + std::to_string(kernels.k2()));
}

// sum_j |a_kj(w)|^2 over the grid.
std::vector<double> channel_power(const KernelStack& kernels, std::size_t channel, SpatialExtent e) {
  std::vector<double> power(e.height * e.width, 0.0);
  for (std::size_t j = 0; j < kernels.c_in(); ++j) {
    const auto spec = padded_spectrum(kernels.kernel(channel, j), kernels.k1(), kernels.k2(), e.height, e.width);
    for (std::size_t i = 0; i < power.size(); ++i) power[i] += std::norm(spec[i]);
  }
  return power;
}

// Multiplies every plane of channel c by spectra[c] in frequency.
ActivationBatch filter_planes(const ActivationBatch& z, const std::vector<std::vector<Complex>>& spectra) {
  const std::size_t h = z.height(), w = z.width(), n = z.plane_size();
  std::vector<double> out(z.values().size());
  std::vector<Complex> buf(n);
  for (std::size_t b = 0; b < z.batch(); ++b)
    for (std::size_t c = 0; c < z.channels(); ++c) {
      const auto plane = z.plane(b, c);
      std::copy(plane.begin(), plane.end(), buf.begin());
      fft2(buf, h, w, Direction::forward);
      for (std::size_t i = 0; i < n; ++i) buf[i] *= spectra[c][i];
      fft2(buf, h, w, Direction::inverse);
      double* dst = out.data() + (b * z.channels() + c) * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] = buf[i].real();
    }
  return ActivationBatch(z.batch(), z.channels(), h, w, std::move(out));
}

// Copies the [r0, r0 + rows) x [c0, c0 + cols) window of every plane.
ActivationBatch crop(const ActivationBatch& z, std::size_t r0, std::size_t c0, std::size_t rows,
                     std::size_t cols) {
  std::vector<double> out(z.batch() * z.channels() * rows * cols);
  std::size_t o = 0;
  for (std::size_t b = 0; b < z.batch(); ++b)
    for (std::size_t c = 0; c < z.channels(); ++c) {
      const auto plane = z.plane(b, c);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[o++] = plane[(r0 + i) * z.width() + c0 + j];
    }
  return ActivationBatch(z.batch(), z.channels(), rows, cols, std::move(out));
}

}  // namespace

SingularSpectrumError::SingularSpectrumError(std::size_t channel, std::size_t row, std::size_t col,
                                             std::size_t width)
    : std::runtime_error("singular preconditioner spectrum: output channel " + std::to_string(channel) +
                         " has zero gain at frequency (" + std::to_string(row) + ", " +
                         std::to_string(col) + "), flat index " + std::to_string(row * width + col) +
                         "; use epsilon > 0"),
      channel_(channel),
      row_(row),
      col_(col),
      width_(width) {}

std::pair<Tensor, Tensor> PrecondSpectrum::to_tensors() const {
  const std::size_t n = extent.height * extent.width;
  std::vector<double> re(channels.size() * n), im(channels.size() * n);
  for (std::size_t k = 0; k < channels.size(); ++k)
    for (std::size_t i = 0; i < n; ++i) {
      re[k * n + i] = channels[k][i].real();
      im[k * n + i] = channels[k][i].imag();
    }
  Shape s{channels.size(), extent.height, extent.width};
  return {Tensor(s, std::move(re)), Tensor(s, std::move(im))};
}

FreqGrid precond_spectrum(const KernelStack& kernels, std::size_t channel, SpatialExtent extent,
                          double epsilon) {
  check_fits(kernels, extent, "precond_spectrum");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
    throw ArgumentError("precond_spectrum: epsilon must be finite and >= 0");
  if (channel >= kernels.c_out()) throw ArgumentError("precond_spectrum: channel out of range");

  const auto power = channel_power(kernels, channel, extent);
  if (epsilon == 0.0) {
    const double peak = std::sqrt(*std::ranges::max_element(power));
    for (std::size_t i = 0; i < power.size(); ++i)
      if (peak == 0.0 || std::sqrt(power[i]) <= kSingularFloor * peak)
        throw SingularSpectrumError(channel, i / extent.width, i % extent.width, extent.width);
  }
  std::vector<Complex> v(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) v[i] = 1.0 / std::sqrt(power[i] + epsilon);
  return FreqGrid({extent.height, extent.width}, std::move(v));
}

PrecondSpectrum precond_spectra(const KernelStack& kernels, SpatialExtent extent, double epsilon) {
  PrecondSpectrum s{extent, epsilon, {}};
  s.channels.reserve(kernels.c_out());
  for (std::size_t k = 0; k < kernels.c_out(); ++k)
    s.channels.push_back(precond_spectrum(kernels, k, extent, epsilon));
  return s;
}

ActivationBatch normalize_activations(const ActivationBatch& z, const PrecondSpectrum& spectrum) {
  if (z.channels() != spectrum.channels.size())
    throw ArgumentError("normalize_activations: activations have " + std::to_string(z.channels()) +
                        " channels, spectrum has " + std::to_string(spectrum.channels.size()));
  if (spectrum.extent != SpatialExtent{z.height(), z.width()})
    throw ArgumentError("normalize_activations: spectrum extent does not match activation grid");
  std::vector<std::vector<Complex>> spectra;
  spectra.reserve(spectrum.channels.size());
  for (const auto& g : spectrum.channels) spectra.push_back(g.values);
  return filter_planes(z, spectra);
}

ActivationBatch normalize_activations(const ActivationBatch& z, const KernelStack& kernels, double epsilon) {
  if (z.channels() != kernels.c_out())
    throw ArgumentError("normalize_activations: activations have " + std::to_string(z.channels()) +
                        " channels, kernels have " + std::to_string(kernels.c_out()) + " outputs");
  return normalize_activations(z, precond_spectra(kernels, {z.height(), z.width()}, epsilon));
}

KernelStack reparam_kernels(const KernelStack& kernels, SpatialExtent extent, double epsilon) {
  const auto spectrum = precond_spectra(kernels, extent, epsilon);
  const std::size_t n = extent.height * extent.width;
  std::vector<double> out(kernels.c_out() * kernels.c_in() * n);
  for (std::size_t k = 0; k < kernels.c_out(); ++k)
    for (std::size_t j = 0; j < kernels.c_in(); ++j) {
      auto g = padded_spectrum(kernels.kernel(k, j), kernels.k1(), kernels.k2(), extent.height, extent.width);
      for (std::size_t i = 0; i < n; ++i) g[i] *= spectrum.channels[k][i];
      fft2(g, extent.height, extent.width, Direction::inverse);
      double* dst = out.data() + (k * kernels.c_in() + j) * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] = g[i].real();
    }
  return KernelStack(kernels.c_out(), kernels.c_in(), extent.height, extent.width, std::move(out));
}

AffineKernels AffineKernels::identity(std::size_t channels, std::size_t k1, std::size_t k2) {
  AffineKernels r;
  std::vector<double> delta(k1 * k2, 0.0);
  delta[0] = 1.0;
  r.kernels.assign(channels, Tensor({k1, k2}, delta));
  return r;
}

ActivationBatch apply_affine(const ActivationBatch& z, const AffineKernels& r) {
  if (r.kernels.size() != z.channels())
    throw ArgumentError("apply_affine: " + std::to_string(r.kernels.size()) + " affine kernels for " +
                        std::to_string(z.channels()) + " channels");
  std::vector<std::vector<Complex>> spectra;
  for (const auto& rk : r.kernels) {
    if (rk.rank() != 2) throw ArgumentError("apply_affine: affine kernels must be 2D");
    spectra.push_back(padded_spectrum(rk.data(), rk.extent(0), rk.extent(1), z.height(), z.width()));
  }
  return filter_planes(z, spectra);
}

ActivationBatch convolve_layer(const ActivationBatch& z_in, const KernelStack& kernels) {
  if (z_in.channels() != kernels.c_in())
    throw ArgumentError("convolve_layer: input has " + std::to_string(z_in.channels()) +
                        " channels, kernels expect " + std::to_string(kernels.c_in()));
  const SpatialExtent e{z_in.height(), z_in.width()};
  check_fits(kernels, e, "convolve_layer");
  const std::size_t n = z_in.plane_size();

  std::vector<std::vector<Complex>> kspec(kernels.c_out() * kernels.c_in());
  for (std::size_t k = 0; k < kernels.c_out(); ++k)
    for (std::size_t j = 0; j < kernels.c_in(); ++j)
      kspec[k * kernels.c_in() + j] = padded_spectrum(kernels.kernel(k, j), kernels.k1(), kernels.k2(), e.height, e.width);

  std::vector<double> out(z_in.batch() * kernels.c_out() * n);
  std::vector<std::vector<Complex>> xs(kernels.c_in(), std::vector<Complex>(n));
  std::vector<Complex> acc(n);
  for (std::size_t b = 0; b < z_in.batch(); ++b) {
    for (std::size_t j = 0; j < kernels.c_in(); ++j) {
      const auto plane = z_in.plane(b, j);
      std::copy(plane.begin(), plane.end(), xs[j].begin());
      fft2(xs[j], e.height, e.width, Direction::forward);
    }
    for (std::size_t k = 0; k < kernels.c_out(); ++k) {
      std::fill(acc.begin(), acc.end(), Complex{});
      for (std::size_t j = 0; j < kernels.c_in(); ++j) {
        const auto& ks = kspec[k * kernels.c_in() + j];
        for (std::size_t i = 0; i < n; ++i) acc[i] += ks[i] * xs[j][i];
      }
      fft2(acc, e.height, e.width, Direction::inverse);
      double* dst = out.data() + (b * kernels.c_out() + k) * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] = acc[i].real();
    }
  }
  return ActivationBatch(z_in.batch(), kernels.c_out(), e.height, e.width, std::move(out));
}

ActivationBatch convnorm_strided(const ActivationBatch& z_in, const KernelStack& kernels, std::size_t stride,
                                 double epsilon) {
  if (stride == 0) throw ArgumentError("convnorm_strided: stride must be >= 1");
  const auto normalized = normalize_activations(convolve_layer(z_in, kernels), kernels, epsilon);
  return ActivationBatch(downsample(normalized.values(), stride));
}

ActivationBatch convnorm_crosscorr(const ActivationBatch& z_in, const KernelStack& kernels, double epsilon) {
  if (kernels.k1() % 2 == 0 || kernels.k2() % 2 == 0)
    throw ArgumentError("convnorm_crosscorr: kernel extents must be odd, got " + std::to_string(kernels.k1()) +
                        "x" + std::to_string(kernels.k2()));
  if (z_in.channels() != kernels.c_in())
    throw ArgumentError("convnorm_crosscorr: channel mismatch");
  const std::size_t pr = kernels.k1() - 1, pc = kernels.k2() - 1;
  const std::size_t h = z_in.height() + pr, w = z_in.width() + pc;  // n + m - 1
  const std::size_t n = h * w;

  // Steps 1-2: pad by m - 1 per side and cross-correlate (valid, stride 1).
  const std::size_t pads[2] = {pr, pc};
  std::vector<double> z_out(z_in.batch() * kernels.c_out() * n, 0.0);
  for (std::size_t b = 0; b < z_in.batch(); ++b)
    for (std::size_t j = 0; j < kernels.c_in(); ++j) {
      const auto plane = z_in.plane(b, j);
      const Tensor x({z_in.height(), z_in.width()}, std::vector<double>(plane.begin(), plane.end()));
      for (std::size_t k = 0; k < kernels.c_out(); ++k) {
        const auto kv = kernels.kernel(k, j);
        const Tensor a({kernels.k1(), kernels.k2()}, std::vector<double>(kv.begin(), kv.end()));
        const Tensor y = cross_correlate(a, x, pads);
        double* dst = z_out.data() + (b * kernels.c_out() + k) * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] += y[i];
      }
    }

  // Step 3: normalize at the padded extent. |F a| = |F flip(a)|, so the
  // unflipped kernels give the right spectrum.
  const auto normalized = normalize_activations(
      ActivationBatch(z_in.batch(), kernels.c_out(), h, w, std::move(z_out)), kernels, epsilon);

  // Step 4: drop (m - 1) / 2 from both ends of each axis.
  return crop(normalized, pr / 2, pc / 2, z_in.height(), z_in.width());
}

double rampdown_momentum(std::size_t iter, std::size_t cap) {
  if (cap == 0) throw ArgumentError("rampdown horizon must be positive");
  const double t = static_cast<double>(std::min(iter, cap)) / static_cast<double>(cap);
  return 0.5 * (1.0 + std::cos(t * std::numbers::pi));
}

PrecondSpectrum EvalAverageState::as_spectrum() const { return PrecondSpectrum{extent, epsilon, average}; }

EvalAverageState update_eval_average(EvalAverageState state, const PrecondSpectrum& spectrum, std::size_t iter) {
  if (iter < state.iter)
    throw ArgumentError("update_eval_average: iteration " + std::to_string(iter) + " precedes " +
                        std::to_string(state.iter));
  if (state.empty()) {
    state.average = spectrum.channels;
    state.extent = spectrum.extent;
    state.epsilon = spectrum.epsilon;
  } else if (state.average.size() != spectrum.channels.size() || state.extent != spectrum.extent) {
    throw ArgumentError("update_eval_average: spectrum shape changed between updates");
  }
  const double mu = rampdown_momentum(iter, state.cap);
  for (std::size_t k = 0; k < state.average.size(); ++k)
    for (std::size_t i = 0; i < state.average[k].size(); ++i)
      state.average[k][i] = mu * state.average[k][i] + (1.0 - mu) * spectrum.channels[k][i];
  state.iter = iter;
  return state;
}

}  // namespace convnorm
