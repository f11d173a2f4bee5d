#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "convnorm/fft.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm {

inline constexpr double kDefaultEpsilon = 1e-12;
inline constexpr std::size_t kDefaultRampdownHorizon = 40000;

struct SpatialExtent {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const SpatialExtent&) const = default;
};

/// A channel's summed kernel power vanishes at some frequency, so the
/// preconditioner (sum_j |a_kj|^2)^{-1/2} does not exist without epsilon.
class SingularSpectrumError : public std::runtime_error {
 public:
  SingularSpectrumError(std::size_t channel, std::size_t row, std::size_t col, std::size_t width);

  std::size_t channel() const noexcept { return channel_; }
  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }
  std::size_t flat_index() const noexcept { return row_ * width_ + col_; }

 private:
  std::size_t channel_, row_, col_, width_;
};

/// Per-output-channel preconditioner spectra v_k over one padded extent.
/// Every entry is real and strictly positive.
struct PrecondSpectrum {
  SpatialExtent extent;
  double epsilon = 0.0;
  std::vector<FreqGrid> channels;

  /// (C_O, H, W) real and imaginary parts, for CNT1 export.
  std::pair<Tensor, Tensor> to_tensors() const;
};

/// v_k = (sum_j |a_kj|^2 + epsilon)^{-1/2} on the H x W grid.
///
/// Kernels are zero-padded at the end of each axis. With epsilon = 0 a
/// frequency whose channel gain sqrt(sum_j |a_kj|^2) is at or below 1e-14
/// times the channel's peak gain raises SingularSpectrumError.
FreqGrid precond_spectrum(const KernelStack& kernels, std::size_t channel, SpatialExtent extent,
                          double epsilon = kDefaultEpsilon);
PrecondSpectrum precond_spectra(const KernelStack& kernels, SpatialExtent extent,
                                double epsilon = kDefaultEpsilon);

/// Circular convolution of every channel plane with v_k (applies P_k = C_{v_k}).
///
/// The spectrum is a constant of the call: callers that differentiate through
/// this map treat it as frozen and reuse the same PrecondSpectrum in backward.
/// Because v_k is real in frequency, C_{v_k} is symmetric and the same call
/// is its own adjoint.
ActivationBatch normalize_activations(const ActivationBatch& z, const PrecondSpectrum& spectrum);
/// Recomputes the spectrum from the kernels at z's spatial extent.
ActivationBatch normalize_activations(const ActivationBatch& z, const KernelStack& kernels,
                                      double epsilon = kDefaultEpsilon);

/// g_kj = v_k * a_kj, returned at the full padded extent (H, W).
KernelStack reparam_kernels(const KernelStack& kernels, SpatialExtent extent,
                            double epsilon = kDefaultEpsilon);

/// Channel-wise affine kernels r_k. Each kernel is 2D and must fit the
/// activation grid it is applied to.
struct AffineKernels {
  std::vector<Tensor> kernels;

  /// r_k = delta of extent k1 x k2 for every channel.
  static AffineKernels identity(std::size_t channels, std::size_t k1, std::size_t k2);
};

/// z_bar_k = r_k * z_k (circular).
ActivationBatch apply_affine(const ActivationBatch& z, const AffineKernels& r);

/// Multi-channel circular convolution layer: z_out_k = sum_j a_kj * z_in_j.
ActivationBatch convolve_layer(const ActivationBatch& z_in, const KernelStack& kernels);

/// Unstrided circular layer, then normalization, then downsampling by `stride`.
ActivationBatch convnorm_strided(const ActivationBatch& z_in, const KernelStack& kernels,
                                 std::size_t stride, double epsilon = kDefaultEpsilon);

/// ConvNorm for cross-correlation layers with odd kernel extents:
/// pad by m - 1, valid cross-correlation, normalize at the padded extent,
/// then drop (m - 1) / 2 samples from each side so the output matches z_in.
ActivationBatch convnorm_crosscorr(const ActivationBatch& z_in, const KernelStack& kernels,
                                   double epsilon = kDefaultEpsilon);

/// Momentum of the eval-time average: 0.5 (1 + cos(min(iter, cap) / cap * pi)).
double rampdown_momentum(std::size_t iter, std::size_t cap = kDefaultRampdownHorizon);

/// Running average of v_k used for evaluation forwards. Single writer.
struct EvalAverageState {
  std::vector<FreqGrid> average;
  std::size_t iter = 0;
  std::size_t cap = kDefaultRampdownHorizon;
  SpatialExtent extent;
  double epsilon = 0.0;

  bool empty() const noexcept { return average.empty(); }
  PrecondSpectrum as_spectrum() const;
};

/// average <- mu(iter) average + (1 - mu(iter)) v. The first update seeds the
/// average with v itself.
EvalAverageState update_eval_average(EvalAverageState state, const PrecondSpectrum& spectrum,
                                     std::size_t iter);

}  // namespace convnorm
