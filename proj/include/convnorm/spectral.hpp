#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "convnorm/convnorm.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm {

/// Singular values at or below this count as exact zeros.
inline constexpr double kZeroSingularValue = 1e-14;
inline constexpr double kInfiniteCondition = std::numeric_limits<double>::infinity();

// Everything here uses the circulant diagonalization: on an H x W grid the
// layer operator is block diagonal in frequency, with one C_O x C_I block
// M(w)_kj = a_kj_hat(w) per frequency.

/// All H*W*min(C_O, C_I) singular values of the layer operator, descending.
std::vector<double> layer_singular_values(const KernelStack& kernels, SpatialExtent extent);

/// Singular values of the single-output-channel operator A_k, i.e.
/// sqrt(sum_j |a_kj_hat(w)|^2) for each w, descending.
std::vector<double> channel_singular_values(const KernelStack& kernels, std::size_t channel,
                                            SpatialExtent extent);

double channel_spectral_norm(const KernelStack& kernels, std::size_t channel, SpatialExtent extent);

/// sigma_max / sigma_min of A_k; kInfiniteCondition when sigma_min <= 1e-14.
double channel_condition_number(const KernelStack& kernels, std::size_t channel, SpatialExtent extent);

/// sigma_max / sigma_min over the whole layer operator.
double layer_condition_number(const KernelStack& kernels, SpatialExtent extent);

/// max_w |sum_j |g_kj_hat(w)|^2 - 1|, which equals max |Q_k Q_k^T - I|.
double tight_frame_residual(const KernelStack& kernels, std::size_t channel, SpatialExtent extent);

struct Prop31Check {
  double norm = 0.0;   // ||Q||
  double bound = 0.0;  // sqrt(sum_k ||Q_k||^2)
  double slack = 0.0;  // bound - norm
  bool holds(double tol = 1e-9) const { return slack >= -tol; }
};

/// Layer spectral norm against the root-sum-square of channel spectral norms.
Prop31Check check_prop31(const KernelStack& kernels, SpatialExtent extent);

struct RhoMetric {
  std::vector<double> ratios;
  double rho = 0.0;
  std::size_t excluded = 0;  // layers where both condition numbers were infinite
};

/// Mean over layers of baseline / method condition numbers.
RhoMetric condition_ratio_rho(std::span<const double> baseline, std::span<const double> method);

struct SpectralReport {
  std::vector<double> channel_condition_numbers;
  std::vector<double> channel_spectral_norms;
  std::vector<double> layer_singular_values;
  double spectral_norm = 0.0;
  double prop31_bound = 0.0;
  double prop31_slack = 0.0;
  std::size_t zero_sv_count = 0;
};

SpectralReport analyze_layer(const KernelStack& kernels, SpatialExtent extent);

/// Stable JSON document. Infinite condition numbers are written as "inf".
std::string report_to_json(const SpectralReport& report, int indent = 2);
SpectralReport report_from_json(const std::string& text);

}  // namespace convnorm
