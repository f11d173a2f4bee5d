#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "convnorm/convnorm.hpp"
#include "convnorm/verify.hpp"
#include "oracles.hpp"

using namespace convnorm;

namespace {

std::vector<double> values(const ActivationBatch& z) { return {z.values().data().begin(), z.values().data().end()}; }
std::vector<double> values(const KernelStack& k) { return {k.weights().data().begin(), k.weights().data().end()}; }

KernelStack delta_stack(std::size_t c_out, std::size_t c_in, std::size_t k1, std::size_t k2) {
  std::vector<double> w(c_out * c_in * k1 * k2, 0.0);
  for (std::size_t k = 0; k < c_out; ++k)
    for (std::size_t j = 0; j < c_in; ++j)
      if (k == j) w[(k * c_in + j) * k1 * k2] = 1.0;
  return KernelStack(c_out, c_in, k1, k2, std::move(w));
}

}  // namespace

TEST(PrecondSpectrum, DeltaIsFlat) {
  const auto v = precond_spectrum(KernelStack(1, 1, 1, 1, {1.0}), 0, {5, 7}, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i], Complex(1.0, 0.0));
}

TEST(PrecondSpectrum, TwoInputChannels) {
  // a1 = [1,0], a2 = [0,1]: |a1_hat|^2 + |a2_hat|^2 = [2,2].
  const KernelStack k(1, 2, 2, 1, {1, 0, 0, 1});
  const auto v = precond_spectrum(k, 0, {2, 1}, 0.0);
  ASSERT_EQ(v.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(v[i].real(), 1.0 / std::numbers::sqrt2, 1e-15);
    EXPECT_EQ(v[i].imag(), 0.0);
  }
}

TEST(PrecondSpectrum, SingularAtNyquist) {
  const KernelStack k(1, 1, 2, 1, {1, 1});
  try {
    precond_spectrum(k, 0, {4, 1}, 0.0);
    FAIL() << "expected SingularSpectrumError";
  } catch (const SingularSpectrumError& e) {
    EXPECT_EQ(e.flat_index(), 2u);
    EXPECT_EQ(e.channel(), 0u);
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
  // Default epsilon regularizes the zero.
  const auto v = precond_spectrum(k, 0, {4, 1});
  EXPECT_NEAR(v[2].real(), 1e6, 1e-3);
}

TEST(PrecondSpectrum, MatchesDirectDft) {
  const auto k = random_kernels(3, 2, 3, 2, 9);
  const SpatialExtent e{6, 5};
  for (std::size_t c = 0; c < 3; ++c) {
    const auto v = precond_spectrum(k, c, e, 0.0);
    std::vector<double> power(30, 0.0);
    for (std::size_t j = 0; j < 2; ++j) {
      const auto kv = k.kernel(c, j);
      const auto A = oracle::dft_real(oracle::pad_to({kv.begin(), kv.end()}, 3, 2, 6, 5), 6, 5);
      for (std::size_t i = 0; i < 30; ++i) power[i] += std::norm(A[i]);
    }
    for (std::size_t i = 0; i < 30; ++i) {
      EXPECT_NEAR(v[i].real() * std::sqrt(power[i]), 1.0, 1e-12);
      EXPECT_EQ(v[i].imag(), 0.0);
    }
  }
}

TEST(PrecondSpectrum, RejectsKernelLargerThanGrid) {
  EXPECT_THROW(precond_spectrum(random_kernels(1, 1, 3, 3, 1), 0, {2, 8}), ArgumentError);
}

TEST(PrecondSpectrum, ExportsAsTensors) {
  const auto s = precond_spectra(random_kernels(2, 1, 3, 3, 4), {4, 4});
  const auto [re, im] = s.to_tensors();
  EXPECT_EQ(re.shape(), (Shape{2, 4, 4}));
  for (double x : im.data()) EXPECT_EQ(x, 0.0);
  for (double x : re.data()) EXPECT_GT(x, 0.0);
}

TEST(NormalizeActivations, DeltaKernelsAreIdentity) {
  const auto z = random_activations(2, 3, 5, 4, 1);
  EXPECT_LT(oracle::max_abs(values(normalize_activations(z, delta_stack(3, 3, 1, 1), 0.0)), values(z)), 1e-15);
}

TEST(NormalizeActivations, ScalarKernelHalves) {
  const auto z = random_activations(1, 1, 4, 4, 2);
  auto want = values(z);
  for (auto& x : want) x /= 2.0;
  EXPECT_LT(oracle::max_abs(values(normalize_activations(z, KernelStack(1, 1, 1, 1, {2.0}), 0.0)), want), 1e-15);
}

TEST(NormalizeActivations, MatchesDenseOracle) {
  const auto a = random_kernels(2, 2, 3, 3, 5);
  const SpatialExtent e{8, 8};
  const auto x = random_activations(1, 2, 8, 8, 6);
  const auto got = normalize_activations(convolve_layer(x, a), a, 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto ak = dense_channel_operator(a, k, e);
    const auto p = dense_inverse_sqrt(dense_multiply(ak, dense_transpose(ak)));
    std::vector<double> stacked(values(x));
    const auto y = p.multiply(ak.multiply(stacked));
    const auto plane = got.plane(0, k);
    EXPECT_LT(oracle::max_abs({plane.begin(), plane.end()}, y), 1e-10);
  }
}

TEST(NormalizeActivations, SpectrumIsDeterministic) {
  const auto a = random_kernels(3, 2, 3, 3, 7);
  const auto s1 = precond_spectra(a, {8, 8}), s2 = precond_spectra(a, {8, 8});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(s1.channels[k].values, s2.channels[k].values);
}

TEST(NormalizeActivations, ChannelMismatch) {
  EXPECT_THROW(normalize_activations(random_activations(1, 2, 4, 4, 1), random_kernels(3, 1, 3, 3, 1)),
               ArgumentError);
}

TEST(ConvolveLayer, MatchesDirectSum) {
  const auto a = random_kernels(2, 3, 3, 2, 8);
  const auto x = random_activations(2, 3, 5, 6, 9);
  const auto y = convolve_layer(x, a);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 2; ++k) {
      std::vector<double> want(30, 0.0);
      for (std::size_t j = 0; j < 3; ++j) {
        const auto kv = a.kernel(k, j);
        const auto p = x.plane(b, j);
        const auto c = oracle::circular({kv.begin(), kv.end()}, 3, 2, {p.begin(), p.end()}, 5, 6);
        for (std::size_t i = 0; i < 30; ++i) want[i] += c[i];
      }
      const auto got = y.plane(b, k);
      EXPECT_LT(oracle::max_abs({got.begin(), got.end()}, want), 1e-12);
    }
}

TEST(ReparamKernels, DeltaStaysDelta) {
  const auto g = reparam_kernels(KernelStack(1, 1, 1, 1, {1.0}), {4, 4}, 0.0);
  auto want = std::vector<double>(16, 0.0);
  want[0] = 1.0;
  EXPECT_LT(oracle::max_abs(values(g), want), 1e-15);
}

TEST(ReparamKernels, ScaledShiftedDeltaBecomesSignedDelta) {
  // a = -3 delta shifted by (1, 2) on a 3 x 4 kernel support.
  std::vector<double> w(12, 0.0);
  w[1 * 4 + 2] = -3.0;
  const auto g = reparam_kernels(KernelStack(1, 1, 3, 4, w), {5, 6}, 0.0);
  std::vector<double> want(30, 0.0);
  want[1 * 6 + 2] = -1.0;
  EXPECT_LT(oracle::max_abs(values(g), want), 1e-14);
}

TEST(ReparamKernels, OrthogonalPair) {
  const auto g = reparam_kernels(KernelStack(1, 2, 2, 1, {1, 0, 0, 1}), {2, 1}, 0.0);
  const double r = 1.0 / std::numbers::sqrt2;
  EXPECT_LT(oracle::max_abs(values(g), {r, 0, 0, r}), 1e-15);
  EXPECT_LT(dense_frame_residual(dense_channel_operator(g, 0, {2, 1})), 1e-15);
}

TEST(ReparamKernels, SingleChannelIsAllPass) {
  const auto g = reparam_kernels(random_kernels(1, 1, 3, 3, 12), {8, 8}, 0.0);
  const auto G = dft(Tensor({8, 8}, values(g)));
  for (std::size_t i = 0; i < G.size(); ++i) EXPECT_NEAR(std::abs(G[i]), 1.0, 1e-12);
}

TEST(ReparamKernels, TightFrameDense) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto g = reparam_kernels(random_kernels(3, 2, 3, 3, s), {6, 6}, 0.0);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_LT(dense_frame_residual(dense_channel_operator(g, k, {6, 6})), 1e-8);
  }
}

TEST(ReparamKernels, IdempotentAndScaleInvariant) {
  const auto a = random_kernels(2, 3, 3, 3, 13);
  const auto g = reparam_kernels(a, {8, 8}, 0.0);
  EXPECT_LT(oracle::max_abs(values(reparam_kernels(g, {8, 8}, 0.0)), values(g)), 1e-10);
  for (double c : {0.1, 7.0, 10.0})
    EXPECT_LT(oracle::max_abs(values(reparam_kernels(a.scaled(c), {8, 8}, 0.0)), values(g)), 1e-10);
}

TEST(ApplyAffine, IdentityAndScalar) {
  const auto z = random_activations(2, 2, 4, 4, 14);
  EXPECT_LT(oracle::max_abs(values(apply_affine(z, AffineKernels::identity(2, 3, 3))), values(z)), 1e-15);
  AffineKernels two;
  two.kernels.assign(2, Tensor({1, 1}, {2.0}));
  auto want = values(z);
  for (auto& x : want) x *= 2.0;
  EXPECT_LT(oracle::max_abs(values(apply_affine(z, two)), want), 1e-15);
}

TEST(ApplyAffine, InverseKernelUndoesNormalization) {
  const auto a = random_kernels(2, 1, 3, 3, 15);
  const SpatialExtent e{6, 6};
  const auto spectrum = precond_spectra(a, e, 0.0);
  const auto z = random_activations(2, 2, 6, 6, 16);
  AffineKernels inv;
  for (const auto& v : spectrum.channels) {
    FreqGrid r = v;
    for (auto& x : r.values) x = 1.0 / x;
    inv.kernels.push_back(idft(r));
  }
  EXPECT_LT(oracle::max_abs(values(apply_affine(normalize_activations(z, spectrum), inv)), values(z)), 1e-10);
}

TEST(ApplyAffine, ChannelMismatch) {
  EXPECT_THROW(apply_affine(random_activations(1, 2, 4, 4, 1), AffineKernels::identity(3, 1, 1)), ArgumentError);
}

TEST(ConvnormStrided, ComposesWithDownsample) {
  const auto a = random_kernels(2, 2, 3, 3, 17);
  const auto x = random_activations(2, 2, 8, 8, 18);
  const auto full = normalize_activations(convolve_layer(x, a), a, 0.0);
  EXPECT_EQ(convnorm_strided(x, a, 1, 0.0), full);
  const auto s2 = convnorm_strided(x, a, 2, 0.0);
  EXPECT_EQ(s2.height(), 4u);
  EXPECT_EQ(s2.values(), downsample(full.values(), 2));
  const auto plain = downsample(x.values(), 2);
  EXPECT_LT(oracle::max_abs(values(convnorm_strided(x, delta_stack(2, 2, 1, 1), 2, 0.0)),
                            {plain.data().begin(), plain.data().end()}),
            1e-15);
}

TEST(ConvnormCrosscorr, DeltaIsIdentity) {
  const auto z = random_activations(1, 2, 5, 6, 19);
  EXPECT_LT(oracle::max_abs(values(convnorm_crosscorr(z, delta_stack(2, 2, 1, 1), 0.0)), values(z)), 1e-15);
}

TEST(ConvnormCrosscorr, ShapesAndOddKernels) {
  const auto z = random_activations(1, 1, 1, 8, 20);
  const auto out = convnorm_crosscorr(z, random_kernels(1, 1, 1, 3, 21), 0.0);
  EXPECT_EQ(out.width(), 8u);
  EXPECT_EQ(out.height(), 1u);
  EXPECT_THROW(convnorm_crosscorr(z, random_kernels(1, 1, 1, 2, 21)), ArgumentError);
}

TEST(ConvnormCrosscorr, MatchesExplicitCircularPipeline) {
  // 1D: correlate with pad m-1 (length n+m-1), normalize circularly, crop.
  const std::size_t n = 8, m = 3, big = n + m - 1;
  const auto a = oracle::gaussian(m, 22);
  const auto x = oracle::gaussian(n, 23);
  const auto out = convnorm_crosscorr(ActivationBatch(1, 1, 1, n, x), KernelStack(1, 1, 1, m, a), 0.0);

  std::vector<double> rev(a.rbegin(), a.rend());
  const auto y = oracle::circular(rev, 1, m, oracle::pad_to(x, 1, n, 1, big), 1, big);
  const auto A = oracle::dft_real(oracle::pad_to(a, 1, m, 1, big), 1, big);
  std::vector<oracle::cd> Y = oracle::dft_real(y, 1, big);
  for (std::size_t i = 0; i < big; ++i) Y[i] /= std::abs(A[i]);
  const auto z = oracle::dft2(Y, 1, big, true);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(out.plane(0, 0)[i], z[i + (m - 1) / 2].real(), 1e-10);
}

TEST(Rampdown, ScheduleValues) {
  EXPECT_EQ(rampdown_momentum(0), 1.0);
  EXPECT_NEAR(rampdown_momentum(20000), 0.5, 1e-15);
  EXPECT_NEAR(rampdown_momentum(40000), 0.0, 1e-15);
  EXPECT_NEAR(rampdown_momentum(90000), 0.0, 1e-15);
  EXPECT_NEAR(rampdown_momentum(5, 10), 0.5, 1e-15);
  EXPECT_THROW(rampdown_momentum(1, 0), ArgumentError);
}

TEST(EvalAverage, SeedsThenBlends) {
  const auto s1 = precond_spectra(random_kernels(2, 2, 3, 3, 24), {4, 4});
  const auto s2 = precond_spectra(random_kernels(2, 2, 3, 3, 25), {4, 4});
  EvalAverageState st;
  st.cap = 10;
  st = update_eval_average(st, s1, 0);
  EXPECT_EQ(st.average[1].values, s1.channels[1].values);
  st = update_eval_average(st, s2, 0);  // mu(0) = 1 keeps the average
  EXPECT_EQ(st.average[1].values, s1.channels[1].values);
  st = update_eval_average(st, s2, 5);  // mu = 0.5
  for (std::size_t i = 0; i < 16; ++i)
    EXPECT_NEAR(st.average[0][i].real(), 0.5 * (s1.channels[0][i].real() + s2.channels[0][i].real()), 1e-13);
  st = update_eval_average(st, s2, 10);  // mu = 0
  EXPECT_EQ(st.average[0].values, s2.channels[0].values);
  for (const auto& g : st.average)
    for (const auto& v : g.values) EXPECT_GT(v.real(), 0.0);
  EXPECT_THROW(update_eval_average(st, s2, 3), ArgumentError);
}
