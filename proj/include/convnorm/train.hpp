#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convnorm/convnorm.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm {

enum class NormMode { none, convnorm, convnorm_affine };

std::string_view to_string(NormMode mode);
/// Accepts "none", "convnorm", "convnorm-affine".
NormMode parse_norm_mode(std::string_view text);

/// Two circular conv layers (stride 1) with optional ConvNorm and affine
/// kernels, ReLU after each, global average pooling and a dense head.
struct ToyConvNet {
  NormMode mode = NormMode::none;
  double epsilon = kDefaultEpsilon;
  KernelStack conv1;
  KernelStack conv2;
  AffineKernels affine1;  // empty unless mode == convnorm_affine
  AffineKernels affine2;
  std::size_t classes = 0;
  std::vector<double> head_weights;  // classes x channels, row-major
  std::vector<double> head_bias;

  /// Xavier-uniform conv and head weights, zero bias, delta affine kernels.
  static ToyConvNet init(NormMode mode, std::uint64_t seed, std::size_t in_channels = 1,
                         std::size_t channels = 8, std::size_t kernel = 3, std::size_t classes = 4);

  std::size_t parameter_count() const;
  /// Flat parameter vector: conv1, conv2, affine1, affine2, head weights, head bias.
  std::vector<double> parameters() const;
  ToyConvNet with_parameters(std::span<const double> flat) const;
};

/// Spectra used by the ConvNorm stages of one forward pass. Backward and
/// finite-difference checks reuse them as constants.
struct FrozenSpectra {
  PrecondSpectrum layer1;
  PrecondSpectrum layer2;
};

struct LayerCache {
  ActivationBatch input;
  ActivationBatch conv_out;
  ActivationBatch normalized;  // equals conv_out when mode == none
  ActivationBatch pre_relu;
  ActivationBatch output;
};

struct ForwardResult {
  std::vector<double> logits;  // batch x classes
  std::vector<double> pooled;  // batch x channels
  LayerCache layer1;
  LayerCache layer2;
  FrozenSpectra spectra;  // empty spectra when mode == none
  std::size_t batch = 0;
};

/// Runs the net. In ConvNorm modes the spectra come from `frozen` when given,
/// otherwise they are recomputed from the current kernels.
ForwardResult forward(const ToyConvNet& net, const ActivationBatch& batch, const FrozenSpectra* frozen = nullptr);

/// Mean softmax cross-entropy.
double cross_entropy(std::span<const double> logits, std::span<const int> labels, std::size_t classes);
/// Fraction of argmax hits; ties go to the lower class index.
double accuracy(std::span<const double> logits, std::span<const int> labels, std::size_t classes);

/// Gradient of the mean cross-entropy in the flat parameter layout. The
/// ConvNorm spectra cached in `fwd` are constants: no gradient flows from
/// them back into the kernels.
std::vector<double> backward(const ToyConvNet& net, const ForwardResult& fwd, std::span<const int> labels);

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Parameters whose +-h perturbation flipped a ReLU; their central
  /// difference straddles a kink and is not compared.
  std::size_t kink_skipped = 0;
};

/// Central differences of the loss with spectra frozen at the evaluation
/// point, against backward(). Error per parameter is
/// |g_fd - g_bp| / max(1e-8, |g_fd| + |g_bp|).
GradcheckResult gradcheck_detailed(const ToyConvNet& net, const ActivationBatch& batch, std::span<const int> labels,
                                   double h = 1e-6);
/// Max relative error of gradcheck_detailed.
double gradcheck(const ToyConvNet& net, const ActivationBatch& batch, std::span<const int> labels, double h = 1e-6);

struct TaskConfig {
  std::uint64_t seed = 0;
  std::size_t classes = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t n_train = 256;
  std::size_t n_test = 128;
  double noise = 0.5;
  std::size_t components = 3;  // gratings per class template
};

/// Per-class multi-grating texture templates plus Gaussian pixel noise.
struct SyntheticTask {
  TaskConfig config;
  std::vector<Tensor> templates;
  ActivationBatch train_x;
  std::vector<int> train_y;
  ActivationBatch test_x;
  std::vector<int> test_y;
};

SyntheticTask generate_synthetic_task(const TaskConfig& config = {});

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  NormMode mode = NormMode::none;
  double epsilon = kDefaultEpsilon;
  /// Horizon of the eval-average rampdown; 0 means the run's total iterations.
  std::size_t rampdown_horizon = 0;
};

struct IterationRecord {
  std::size_t iteration;
  double loss;
  double train_accuracy;
};

struct EpochRecord {
  std::size_t epoch;
  double test_accuracy;
};

struct TrainTrace {
  TrainConfig config;
  std::size_t iterations_per_epoch = 0;
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
  bool diverged = false;

  /// First iteration (1-based count) at which the mean train accuracy over the
  /// trailing epoch-length window reaches `threshold`.
  std::optional<std::size_t> iterations_to_accuracy(double threshold) const;
};

/// Plain mini-batch SGD. Deterministic for a given config. Returns the trace;
/// `net` holds the trained parameters on return.
TrainTrace train(ToyConvNet& net, const SyntheticTask& task, const TrainConfig& config);

/// "iteration,loss,train_acc" header plus one row per iteration, 17 significant digits.
std::string trace_to_csv(const TrainTrace& trace);
/// Config echo, per-epoch test accuracy and summary fields.
std::string trace_header_json(const TrainTrace& trace, int indent = 2);

/// Vanilla and ConvNorm runs on the same task, init seed and batch order.
struct ConvergenceDemo {
  TaskConfig task;
  TrainConfig baseline;
  TrainConfig normalized;
  TrainTrace baseline_trace;
  TrainTrace normalized_trace;

  /// Iterations to 90% train accuracy of each run and their ratio.
  std::string comparison_json(int indent = 2) const;
};

/// Default demo settings for a task seed: default task, batch 16, 30 epochs.
ConvergenceDemo make_convergence_demo(std::uint64_t seed = 0, NormMode mode = NormMode::convnorm_affine,
                                      double epsilon = kDefaultEpsilon);
/// Runs both arms in place.
void run_convergence_demo(ConvergenceDemo& demo);

}  // namespace convnorm
