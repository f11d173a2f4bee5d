#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "convnorm/circulant.hpp"
#include "convnorm/convnorm.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm {

// Dense reference operators. These materialize the circulant matrices and
// use generic dense linear algebra, independently of the FFT paths.

/// (C_O*H*W) x (C_I*H*W) block matrix with block (k, j) = C_{a_kj}.
DenseMatrix dense_layer_operator(const KernelStack& kernels, SpatialExtent extent);
/// (H*W) x (C_I*H*W) row of blocks for output channel k.
DenseMatrix dense_channel_operator(const KernelStack& kernels, std::size_t channel, SpatialExtent extent);
DenseMatrix dense_multiply(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix dense_transpose(const DenseMatrix& a);
/// M^{-1/2} for a symmetric positive definite M, by eigendecomposition.
DenseMatrix dense_inverse_sqrt(const DenseMatrix& m);
/// Singular values, descending.
std::vector<double> dense_singular_values(const DenseMatrix& m);
/// max |M M^T - I|.
double dense_frame_residual(const DenseMatrix& m);

/// Gaussian kernels with the given shape.
KernelStack random_kernels(std::size_t c_out, std::size_t c_in, std::size_t k1, std::size_t k2,
                           std::uint64_t seed);
ActivationBatch random_activations(std::size_t batch, std::size_t channels, std::size_t height,
                                   std::size_t width, std::uint64_t seed);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

CheckResult check_tight_frame(std::uint64_t seed = 1);
CheckResult check_channel_condition(std::uint64_t seed = 1);
CheckResult check_norm_bound(std::uint64_t seed = 2);
CheckResult check_fft_dense_equivalence(std::uint64_t seed = 3);
CheckResult check_conventions(std::uint64_t seed = 4);
CheckResult check_reparam_invariance(std::uint64_t seed = 5);
CheckResult check_singular_values(std::uint64_t seed = 6);
CheckResult check_gradients(std::uint64_t seed = 0);
CheckResult check_rampdown();

/// All of the above in order.
std::vector<CheckResult> run_verification_suite();

}  // namespace convnorm
