#include "convnorm/verify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "convnorm/spectral.hpp"
#include "convnorm/train.hpp"

namespace convnorm {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_eigen(const DenseMatrix& m) {
  return Eigen::Map<const Mat>(m.entries.data(), static_cast<Eigen::Index>(m.rows),
                               static_cast<Eigen::Index>(m.cols));
}

DenseMatrix from_eigen(const Mat& m) {
  DenseMatrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  Eigen::Map<Mat>(out.entries.data(), m.rows(), m.cols()) = m;
  return out;
}

Tensor kernel_tensor(const KernelStack& kernels, std::size_t k, std::size_t j) {
  const auto v = kernels.kernel(k, j);
  return Tensor({kernels.k1(), kernels.k2()}, std::vector<double>(v.begin(), v.end()));
}

Tensor plane_tensor(const ActivationBatch& z, std::size_t b, std::size_t c) {
  const auto v = z.plane(b, c);
  return Tensor({z.height(), z.width()}, std::vector<double>(v.begin(), v.end()));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string sci(double x) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << x;
  return os.str();
}

CheckResult result(std::string name, bool passed, std::string detail) {
  return CheckResult{std::move(name), passed, std::move(detail)};
}

// Channel operator applied to a batch item: y_k = sum_j C_{a_kj} x_j.
std::vector<double> dense_apply_channel(const DenseMatrix& ak, const ActivationBatch& x, std::size_t b) {
  std::vector<double> stacked;
  for (std::size_t j = 0; j < x.channels(); ++j) {
    const auto p = x.plane(b, j);
    stacked.insert(stacked.end(), p.begin(), p.end());
  }
  return ak.multiply(stacked);
}

}  // namespace

DenseMatrix dense_layer_operator(const KernelStack& kernels, SpatialExtent extent) {
  const std::size_t n = extent.height * extent.width;
  DenseMatrix out(kernels.c_out() * n, kernels.c_in() * n);
  for (std::size_t k = 0; k < kernels.c_out(); ++k)
    for (std::size_t j = 0; j < kernels.c_in(); ++j) {
      const auto block = build_circulant(kernel_tensor(kernels, k, j), extent.height, extent.width);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) out(k * n + r, j * n + c) = block(r, c);
    }
  return out;
}

DenseMatrix dense_channel_operator(const KernelStack& kernels, std::size_t channel, SpatialExtent extent) {
  const std::size_t n = extent.height * extent.width;
  DenseMatrix out(n, kernels.c_in() * n);
  for (std::size_t j = 0; j < kernels.c_in(); ++j) {
    const auto block = build_circulant(kernel_tensor(kernels, channel, j), extent.height, extent.width);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) out(r, j * n + c) = block(r, c);
  }
  return out;
}

DenseMatrix dense_multiply(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows) throw ArgumentError("dense_multiply: inner dimensions differ");
  return from_eigen(to_eigen(a) * to_eigen(b));
}

DenseMatrix dense_transpose(const DenseMatrix& a) { return from_eigen(to_eigen(a).transpose()); }

DenseMatrix dense_inverse_sqrt(const DenseMatrix& m) {
  if (m.rows != m.cols) throw ArgumentError("dense_inverse_sqrt: matrix is not square");
  const Eigen::MatrixXd s = to_eigen(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) throw ArgumentError("dense_inverse_sqrt: eigendecomposition failed");
  if (eig.eigenvalues().minCoeff() <= 0.0) throw ArgumentError("dense_inverse_sqrt: matrix is not positive definite");
  const Eigen::VectorXd d = eig.eigenvalues().cwiseSqrt().cwiseInverse();
  return from_eigen(eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose());
}

std::vector<double> dense_singular_values(const DenseMatrix& m) {
  const Eigen::MatrixXd a = to_eigen(m);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  std::vector<double> out(s.data(), s.data() + s.size());
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

double dense_frame_residual(const DenseMatrix& m) {
  const Mat a = to_eigen(m);
  const Mat g = a * a.transpose() - Mat::Identity(a.rows(), a.rows());
  return g.cwiseAbs().maxCoeff();
}

KernelStack random_kernels(std::size_t c_out, std::size_t c_in, std::size_t k1, std::size_t k2,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<double> w(c_out * c_in * k1 * k2);
  for (auto& x : w) x = gauss(rng);
  return KernelStack(c_out, c_in, k1, k2, std::move(w));
}

ActivationBatch random_activations(std::size_t batch, std::size_t channels, std::size_t height,
                                   std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<double> v(batch * channels * height * width);
  for (auto& x : v) x = gauss(rng);
  return ActivationBatch(batch, channels, height, width, std::move(v));
}

namespace {

// Layer shapes shared by the tight-frame and condition checks.
struct RandomLayer {
  KernelStack kernels;
  SpatialExtent extent;
};

std::vector<RandomLayer> frame_layers(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ch(1, 4);
  std::vector<RandomLayer> layers;
  for (int i = 0; i < 50; ++i) {
    const std::size_t co = ch(rng), ci = ch(rng);
    layers.push_back({random_kernels(co, ci, 3, 3, rng()), {8, 8}});
  }
  return layers;
}

}  // namespace

CheckResult check_tight_frame(std::uint64_t seed) {
  double worst = 0.0;
  for (const auto& layer : frame_layers(seed)) {
    const auto g = reparam_kernels(layer.kernels, layer.extent, 0.0);
    for (std::size_t k = 0; k < g.c_out(); ++k)
      worst = std::max(worst, dense_frame_residual(dense_channel_operator(g, k, layer.extent)));
  }
  return result("tight frame", worst < 1e-8, "50 layers, max |Q_k Q_k^T - I| = " + sci(worst));
}

CheckResult check_channel_condition(std::uint64_t seed) {
  double lo = kInfiniteCondition, hi = 0.0;
  for (const auto& layer : frame_layers(seed)) {
    const auto g = reparam_kernels(layer.kernels, layer.extent, 0.0);
    for (std::size_t k = 0; k < g.c_out(); ++k) {
      const double kappa = channel_condition_number(g, k, layer.extent);
      lo = std::min(lo, kappa);
      hi = std::max(hi, kappa);
    }
  }
  const bool ok = lo >= 1.0 - 1e-12 && hi <= 1.0 + 1e-6;
  return result("channel condition number", ok, "kappa(Q_k) in [" + sci(lo) + ", " + sci(hi) + "]");
}

CheckResult check_norm_bound(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ch(1, 4);
  const SpatialExtent extent{8, 8};
  double worst_raw = kInfiniteCondition, worst_reparam = kInfiniteCondition, worst_dense = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t co = ch(rng), ci = ch(rng);
    const auto a = random_kernels(co, ci, 3, 3, rng());
    const auto raw = check_prop31(a, extent);
    worst_raw = std::min(worst_raw, raw.slack);
    const auto g = reparam_kernels(a, extent, 0.0);
    const auto rep = check_prop31(g, extent);
    worst_reparam = std::min({worst_reparam, rep.slack, std::sqrt(static_cast<double>(co)) - rep.norm});
    if (i < 10) {
      const double dense = dense_singular_values(dense_layer_operator(a, extent)).front();
      worst_dense = std::max(worst_dense, std::abs(dense - raw.norm));
    }
  }
  const bool ok = worst_raw >= -1e-9 && worst_reparam >= -1e-9 && worst_dense < 1e-8;
  return result("norm bound", ok,
                "min slack raw " + sci(worst_raw) + ", reparametrized " + sci(worst_reparam) +
                    ", dense |dnorm| " + sci(worst_dense));
}

CheckResult check_fft_dense_equivalence(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ch(1, 3), side(3, 8);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const SpatialExtent extent{side(rng), side(rng)};
    const std::size_t co = ch(rng), ci = ch(rng);
    const auto a = random_kernels(co, ci, 3, 3, rng());
    const auto x = random_activations(2, ci, extent.height, extent.width, rng());
    const auto fast = normalize_activations(convolve_layer(x, a), a, 0.0);
    const std::size_t n = extent.height * extent.width;
    for (std::size_t k = 0; k < co; ++k) {
      const auto ak = dense_channel_operator(a, k, extent);
      const auto p = dense_inverse_sqrt(dense_multiply(ak, dense_transpose(ak)));
      for (std::size_t b = 0; b < x.batch(); ++b) {
        const auto y = p.multiply(dense_apply_channel(ak, x, b));
        worst = std::max(worst, max_abs_diff(fast.plane(b, k), std::span<const double>(y.data(), n)));
      }
    }
  }
  return result("fft/dense normalization", worst < 1e-10, "20 instances, max diff " + sci(worst));
}

CheckResult check_conventions(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> side(4, 8), odd(0, 2), ch(1, 3);
  bool exact = true;
  double worst_lin = 0.0, worst_pipe = 0.0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t m1 = 2 * odd(rng) + 1, m2 = 2 * odd(rng) + 1;
    const std::size_t h = side(rng), w = side(rng);
    const auto ks = random_kernels(1, 1, m1, m2, rng());
    const auto a = kernel_tensor(ks, 0, 0);
    const auto x = plane_tensor(random_activations(1, 1, h, w, rng()), 0, 0);

    // Cross-correlation with m - 1 padding is full convolution with the reversed kernel.
    const std::size_t pads[2] = {m1 - 1, m2 - 1};
    exact = exact && cross_correlate(a, x, pads) == linear_convolve_full(reverse_kernel(a), x);

    // Full linear convolution is circular convolution after zero-padding to n + m - 1.
    const auto padded = zero_pad(x, {{0, m1 - 1}, {0, m2 - 1}});
    const auto circ = circular_convolve(a, padded, ConvMode::fft);
    worst_lin = std::max(worst_lin, max_abs_diff(linear_convolve_full(a, x).data(), circ.data()));

    // convnorm_crosscorr against dense circulants at the padded extent.
    const std::size_t co = ch(rng), ci = ch(rng);
    const auto kernels = random_kernels(co, ci, m1, m2, rng());
    const auto z = random_activations(2, ci, h, w, rng());
    const auto fast = convnorm_crosscorr(z, kernels, 0.0);
    const SpatialExtent big{h + m1 - 1, w + m2 - 1};
    std::vector<double> rev;
    for (std::size_t k = 0; k < co; ++k)
      for (std::size_t j = 0; j < ci; ++j) {
        const auto r = reverse_kernel(kernel_tensor(kernels, k, j));
        rev.insert(rev.end(), r.data().begin(), r.data().end());
      }
    const KernelStack reversed(co, ci, m1, m2, std::move(rev));
    std::vector<double> zpad;
    for (std::size_t b = 0; b < z.batch(); ++b)
      for (std::size_t j = 0; j < ci; ++j) {
        const auto t = zero_pad(plane_tensor(z, b, j), {{0, m1 - 1}, {0, m2 - 1}});
        zpad.insert(zpad.end(), t.data().begin(), t.data().end());
      }
    const ActivationBatch zp(z.batch(), ci, big.height, big.width, std::move(zpad));
    for (std::size_t k = 0; k < co; ++k) {
      const auto bk = dense_channel_operator(reversed, k, big);
      const auto p = dense_inverse_sqrt(dense_multiply(bk, dense_transpose(bk)));
      for (std::size_t b = 0; b < z.batch(); ++b) {
        const auto y = p.multiply(dense_apply_channel(bk, zp, b));
        const auto got = fast.plane(b, k);
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < w; ++c)
            worst_pipe = std::max(worst_pipe,
                                  std::abs(got[r * w + c] - y[(r + (m1 - 1) / 2) * big.width + c + (m2 - 1) / 2]));
      }
    }
  }
  const bool ok = exact && worst_lin < 1e-12 && worst_pipe < 1e-10;
  return result("convolution conventions", ok,
                std::string("cross-correlation ") + (exact ? "exact" : "NOT exact") + ", linear/circular " +
                    sci(worst_lin) + ", crosscorr pipeline " + sci(worst_pipe));
}

CheckResult check_reparam_invariance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ch(1, 4);
  const SpatialExtent extent{8, 8};
  double worst_idem = 0.0, worst_scale = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto a = random_kernels(ch(rng), ch(rng), 3, 3, rng());
    const auto g = reparam_kernels(a, extent, 0.0);
    const auto gg = reparam_kernels(g, extent, 0.0);
    worst_idem = std::max(worst_idem, max_abs_diff(g.weights().data(), gg.weights().data()));
    for (double c : {0.1, 10.0}) {
      const auto gc = reparam_kernels(a.scaled(c), extent, 0.0);
      worst_scale = std::max(worst_scale, max_abs_diff(g.weights().data(), gc.weights().data()));
    }
  }
  const bool ok = worst_idem < 1e-10 && worst_scale < 1e-10;
  return result("reparametrization invariance", ok,
                "idempotence " + sci(worst_idem) + ", scaling " + sci(worst_scale));
}

CheckResult check_singular_values(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ch(1, 2), k(1, 3);
  const SpatialExtent extent{6, 6};
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto a = random_kernels(ch(rng), ch(rng), k(rng), k(rng), rng());
    const auto fast = layer_singular_values(a, extent);
    auto dense = dense_singular_values(dense_layer_operator(a, extent));
    if (dense.size() != fast.size()) return result("singular values", false, "count mismatch");
    worst = std::max(worst, max_abs_diff(fast, dense));
  }
  return result("singular values", worst < 1e-8, "10 layers, max diff " + sci(worst));
}

CheckResult check_gradients(std::uint64_t seed) {
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t s = seed; s < seed + 5; ++s) {
    TaskConfig tc;
    tc.seed = s;
    tc.height = 8;
    tc.width = 8;
    tc.n_train = 4;
    tc.n_test = 4;
    const auto task = generate_synthetic_task(tc);
    for (auto mode : {NormMode::none, NormMode::convnorm, NormMode::convnorm_affine}) {
      auto net = ToyConvNet::init(mode, s);
      if (mode == NormMode::convnorm_affine) {
        // Move the affine kernels off the identity so their gradients are generic.
        std::mt19937_64 rng(s);
        std::normal_distribution<double> gauss(0.0, 0.1);
        for (auto* layer : {&net.affine1, &net.affine2})
          for (auto& r : layer->kernels) {
            std::vector<double> v(r.data().begin(), r.data().end());
            for (auto& x : v) x += gauss(rng);
            r = Tensor(r.shape(), std::move(v));
          }
      }
      const auto g = gradcheck_detailed(net, task.train_x, task.train_y, 1e-5);
      worst = std::max(worst, g.max_relative_error);
      checked += g.checked;
      skipped += g.kink_skipped;
    }
  }
  return result("gradients", worst < 1e-5,
                "3 modes x 5 seeds, max relative error " + sci(worst) + " over " + std::to_string(checked) +
                    " parameters (" + std::to_string(skipped) + " at ReLU kinks)");
}

CheckResult check_rampdown() {
  const double m0 = rampdown_momentum(0), mid = rampdown_momentum(20000), end = rampdown_momentum(40000),
               past = rampdown_momentum(100000);
  const bool ok = std::abs(m0 - 1.0) <= 1e-15 && std::abs(mid - 0.5) <= 1e-15 && std::abs(end) <= 1e-15 &&
                  std::abs(past) <= 1e-15;
  return result("rampdown schedule", ok,
                "mu(0)=" + sci(m0) + " mu(20000)=" + sci(mid) + " mu(40000)=" + sci(end) + " mu(1e5)=" + sci(past));
}

std::vector<CheckResult> run_verification_suite() {
  return {check_tight_frame(),        check_channel_condition(), check_norm_bound(),
          check_fft_dense_equivalence(), check_conventions(),     check_reparam_invariance(),
          check_singular_values(),    check_gradients(),         check_rampdown()};
}

}  // namespace convnorm
