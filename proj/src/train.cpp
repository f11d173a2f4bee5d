#include "convnorm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <random>

#include "convnorm/fft.hpp"

namespace convnorm {
namespace {

// Gradient buffers skip Tensor's finiteness checks; a NaN here is reported
// through the loss instead.
struct Planes {
  std::size_t batch = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;

  std::size_t plane_size() const { return height * width; }
  double* plane(std::size_t b, std::size_t c) { return data.data() + (b * channels + c) * plane_size(); }
  const double* plane(std::size_t b, std::size_t c) const {
    return data.data() + (b * channels + c) * plane_size();
  }
};

Planes zeros_like(const ActivationBatch& z) {
  return {z.batch(), z.channels(), z.height(), z.width(), std::vector<double>(z.values().size(), 0.0)};
}

using Spectrum = std::vector<Complex>;

Spectrum forward_fft(const double* src, std::size_t h, std::size_t w) {
  Spectrum s(src, src + h * w);
  fft2(s, h, w, Direction::forward);
  return s;
}

void inverse_fft_into(Spectrum s, std::size_t h, std::size_t w, double* dst) {
  fft2(s, h, w, Direction::inverse);
  for (std::size_t i = 0; i < s.size(); ++i) dst[i] = s[i].real();
}

std::vector<Spectrum> plane_spectra(const ActivationBatch& z) {
  std::vector<Spectrum> out;
  out.reserve(z.batch() * z.channels());
  for (std::size_t b = 0; b < z.batch(); ++b)
    for (std::size_t c = 0; c < z.channels(); ++c)
      out.push_back(forward_fft(z.plane(b, c).data(), z.height(), z.width()));
  return out;
}

std::vector<Spectrum> plane_spectra(const Planes& z) {
  std::vector<Spectrum> out;
  out.reserve(z.batch * z.channels);
  for (std::size_t b = 0; b < z.batch; ++b)
    for (std::size_t c = 0; c < z.channels; ++c) out.push_back(forward_fft(z.plane(b, c), z.height, z.width));
  return out;
}

// Entries [0, kh) x [0, kw) of the circular cross-correlation
// sum_i grad[i] signal[i - s], accumulated over the batch, from spectra.
void accumulate_kernel_grad(const Spectrum& grad_hat, const Spectrum& signal_hat, Spectrum& acc) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad_hat[i] * std::conj(signal_hat[i]);
}

void extract_support(Spectrum acc, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, double* dst) {
  fft2(acc, h, w, Direction::inverse);
  for (std::size_t p = 0; p < kh; ++p)
    for (std::size_t q = 0; q < kw; ++q) dst[p * kw + q] = acc[p * w + q].real();
}

ActivationBatch relu(const ActivationBatch& z) {
  std::vector<double> out(z.values().data().begin(), z.values().data().end());
  for (auto& v : out) v = std::max(v, 0.0);
  return ActivationBatch(z.batch(), z.channels(), z.height(), z.width(), std::move(out));
}

LayerCache run_layer(const ActivationBatch& in, const KernelStack& kernels, NormMode mode, const AffineKernels& affine,
                     double epsilon, const PrecondSpectrum* frozen, PrecondSpectrum& used) {
  LayerCache c;
  c.input = in;
  c.conv_out = convolve_layer(in, kernels);
  if (mode == NormMode::none) {
    c.normalized = c.conv_out;
  } else {
    used = frozen ? *frozen : precond_spectra(kernels, {in.height(), in.width()}, epsilon);
    c.normalized = normalize_activations(c.conv_out, used);
  }
  c.pre_relu = mode == NormMode::convnorm_affine ? apply_affine(c.normalized, affine) : c.normalized;
  c.output = relu(c.pre_relu);
  return c;
}

struct LayerGrads {
  std::vector<double> kernels;
  std::vector<double> affine;  // c_out * kh * kw, empty without affine
  Planes input;                // empty unless requested
};

// Backpropagates d(loss)/d(output) through ReLU, affine, frozen ConvNorm and
// the circular convolution.
LayerGrads backprop_layer(const LayerCache& cache, const Planes& d_out, const KernelStack& kernels, NormMode mode,
                          const AffineKernels& affine, const PrecondSpectrum& spectrum, bool need_input_grad) {
  const std::size_t h = cache.input.height(), w = cache.input.width(), n = h * w;
  const std::size_t batch = cache.input.batch(), co = kernels.c_out(), ci = kernels.c_in();

  Planes d_pre = d_out;
  const auto pre = cache.pre_relu.values().data();
  for (std::size_t i = 0; i < d_pre.data.size(); ++i)
    if (!(pre[i] > 0.0)) d_pre.data[i] = 0.0;

  LayerGrads g;
  std::vector<Spectrum> d_hat = plane_spectra(d_pre);

  if (mode == NormMode::convnorm_affine) {
    // pre = r * normalized: d_normalized = conj(r_hat) d_pre_hat, d_r from correlation with normalized.
    const auto norm_hat = plane_spectra(cache.normalized);
    const std::size_t kh = affine.kernels.front().extent(0), kw = affine.kernels.front().extent(1);
    g.affine.assign(co * kh * kw, 0.0);
    for (std::size_t k = 0; k < co; ++k) {
      const auto& rk = affine.kernels[k];
      const auto r_hat = padded_spectrum(rk.data(), kh, kw, h, w);
      Spectrum acc(n);
      for (std::size_t b = 0; b < batch; ++b) {
        auto& dh = d_hat[b * co + k];
        accumulate_kernel_grad(dh, norm_hat[b * co + k], acc);
        for (std::size_t i = 0; i < n; ++i) dh[i] *= std::conj(r_hat[i]);
      }
      extract_support(std::move(acc), h, w, kh, kw, g.affine.data() + k * kh * kw);
    }
  }

  if (mode != NormMode::none) {
    // v_hat is real, so C_v is symmetric; the spectrum is a constant here.
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < co; ++k) {
        auto& dh = d_hat[b * co + k];
        const auto& v = spectrum.channels[k];
        for (std::size_t i = 0; i < n; ++i) dh[i] *= v[i];
      }
  }

  // conv_out_k = sum_j a_kj * x_j.
  const auto x_hat = plane_spectra(cache.input);
  const std::size_t k1 = kernels.k1(), k2 = kernels.k2();
  g.kernels.assign(co * ci * k1 * k2, 0.0);
  std::vector<Spectrum> a_hat(co * ci);
  for (std::size_t k = 0; k < co; ++k)
    for (std::size_t j = 0; j < ci; ++j) {
      a_hat[k * ci + j] = padded_spectrum(kernels.kernel(k, j), k1, k2, h, w);
      Spectrum acc(n);
      for (std::size_t b = 0; b < batch; ++b) accumulate_kernel_grad(d_hat[b * co + k], x_hat[b * ci + j], acc);
      extract_support(std::move(acc), h, w, k1, k2, g.kernels.data() + (k * ci + j) * k1 * k2);
    }

  if (need_input_grad) {
    g.input = zeros_like(cache.input);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < ci; ++j) {
        Spectrum acc(n);
        for (std::size_t k = 0; k < co; ++k) {
          const auto& dh = d_hat[b * co + k];
          const auto& ah = a_hat[k * ci + j];
          for (std::size_t i = 0; i < n; ++i) acc[i] += std::conj(ah[i]) * dh[i];
        }
        inverse_fft_into(std::move(acc), h, w, g.input.plane(b, j));
      }
  }
  return g;
}

std::vector<double> softmax_row(std::span<const double> z) {
  const double m = *std::ranges::max_element(z);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

std::vector<double> xavier(std::mt19937_64& rng, std::size_t count, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(count);
  for (auto& v : w) v = dist(rng);
  return w;
}

ActivationBatch gather(const ActivationBatch& x, std::span<const std::size_t> rows) {
  const std::size_t per = x.channels() * x.plane_size();
  std::vector<double> out;
  out.reserve(rows.size() * per);
  for (auto r : rows) {
    auto src = x.values().data().subspan(r * per, per);
    out.insert(out.end(), src.begin(), src.end());
  }
  return ActivationBatch(rows.size(), x.channels(), x.height(), x.width(), std::move(out));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(NormMode mode) {
  switch (mode) {
    case NormMode::none: return "none";
    case NormMode::convnorm: return "convnorm";
    case NormMode::convnorm_affine: return "convnorm-affine";
  }
  return "none";
}

NormMode parse_norm_mode(std::string_view text) {
  if (text == "none") return NormMode::none;
  if (text == "convnorm") return NormMode::convnorm;
  if (text == "convnorm-affine") return NormMode::convnorm_affine;
  throw ArgumentError("unknown normalization mode '" + std::string(text) + "'");
}

ToyConvNet ToyConvNet::init(NormMode mode, std::uint64_t seed, std::size_t in_channels, std::size_t channels,
                            std::size_t kernel, std::size_t classes) {
  std::mt19937_64 rng(seed);
  const std::size_t kk = kernel * kernel;
  ToyConvNet net;
  net.mode = mode;
  net.classes = classes;
  net.conv1 = KernelStack(channels, in_channels, kernel, kernel,
                          xavier(rng, channels * in_channels * kk, in_channels * kk, channels * kk));
  net.conv2 = KernelStack(channels, channels, kernel, kernel,
                          xavier(rng, channels * channels * kk, channels * kk, channels * kk));
  net.head_weights = xavier(rng, classes * channels, channels, classes);
  net.head_bias.assign(classes, 0.0);
  if (mode == NormMode::convnorm_affine) {
    net.affine1 = AffineKernels::identity(channels, kernel, kernel);
    net.affine2 = AffineKernels::identity(channels, kernel, kernel);
  }
  return net;
}

std::size_t ToyConvNet::parameter_count() const {
  std::size_t n = conv1.weights().size() + conv2.weights().size() + head_weights.size() + head_bias.size();
  for (const auto& r : affine1.kernels) n += r.size();
  for (const auto& r : affine2.kernels) n += r.size();
  return n;
}

std::vector<double> ToyConvNet::parameters() const {
  std::vector<double> p;
  p.reserve(parameter_count());
  auto append = [&p](std::span<const double> s) { p.insert(p.end(), s.begin(), s.end()); };
  append(conv1.weights().data());
  append(conv2.weights().data());
  for (const auto& r : affine1.kernels) append(r.data());
  for (const auto& r : affine2.kernels) append(r.data());
  append(head_weights);
  append(head_bias);
  return p;
}

ToyConvNet ToyConvNet::with_parameters(std::span<const double> flat) const {
  if (flat.size() != parameter_count())
    throw ArgumentError("with_parameters: expected " + std::to_string(parameter_count()) + " values, got " +
                        std::to_string(flat.size()));
  ToyConvNet net = *this;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(off),
                          flat.begin() + static_cast<std::ptrdiff_t>(off + n));
    off += n;
    return v;
  };
  net.conv1 = KernelStack(conv1.c_out(), conv1.c_in(), conv1.k1(), conv1.k2(), take(conv1.weights().size()));
  net.conv2 = KernelStack(conv2.c_out(), conv2.c_in(), conv2.k1(), conv2.k2(), take(conv2.weights().size()));
  for (auto& r : net.affine1.kernels) r = Tensor(r.shape(), take(r.size()));
  for (auto& r : net.affine2.kernels) r = Tensor(r.shape(), take(r.size()));
  net.head_weights = take(head_weights.size());
  net.head_bias = take(head_bias.size());
  return net;
}

ForwardResult forward(const ToyConvNet& net, const ActivationBatch& batch, const FrozenSpectra* frozen) {
  if (batch.channels() != net.conv1.c_in())
    throw ArgumentError("forward: input has " + std::to_string(batch.channels()) + " channels, net expects " +
                        std::to_string(net.conv1.c_in()));
  ForwardResult r;
  r.batch = batch.batch();
  r.layer1 = run_layer(batch, net.conv1, net.mode, net.affine1, net.epsilon, frozen ? &frozen->layer1 : nullptr,
                       r.spectra.layer1);
  r.layer2 = run_layer(r.layer1.output, net.conv2, net.mode, net.affine2, net.epsilon,
                       frozen ? &frozen->layer2 : nullptr, r.spectra.layer2);

  const auto& h2 = r.layer2.output;
  const std::size_t c = h2.channels();
  r.pooled.assign(r.batch * c, 0.0);
  for (std::size_t b = 0; b < r.batch; ++b)
    for (std::size_t k = 0; k < c; ++k) {
      const auto plane = h2.plane(b, k);
      r.pooled[b * c + k] = std::accumulate(plane.begin(), plane.end(), 0.0) / static_cast<double>(plane.size());
    }

  r.logits.assign(r.batch * net.classes, 0.0);
  for (std::size_t b = 0; b < r.batch; ++b)
    for (std::size_t o = 0; o < net.classes; ++o) {
      double s = net.head_bias[o];
      for (std::size_t k = 0; k < c; ++k) s += net.head_weights[o * c + k] * r.pooled[b * c + k];
      r.logits[b * net.classes + o] = s;
    }
  return r;
}

double cross_entropy(std::span<const double> logits, std::span<const int> labels, std::size_t classes) {
  if (logits.size() != labels.size() * classes) throw ArgumentError("cross_entropy: logits/labels size mismatch");
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = logits.subspan(b * classes, classes);
    const double m = *std::ranges::max_element(row);
    double s = 0.0;
    for (double z : row) s += std::exp(z - m);
    total += m + std::log(s) - row[static_cast<std::size_t>(labels[b])];
  }
  return total / static_cast<double>(labels.size());
}

double accuracy(std::span<const double> logits, std::span<const int> labels, std::size_t classes) {
  if (logits.size() != labels.size() * classes) throw ArgumentError("accuracy: logits/labels size mismatch");
  std::size_t hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = logits.subspan(b * classes, classes);
    // max_element returns the first maximum, i.e. the lowest tied index.
    const auto best = static_cast<int>(std::ranges::max_element(row) - row.begin());
    hits += best == labels[b];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<double> backward(const ToyConvNet& net, const ForwardResult& fwd, std::span<const int> labels) {
  if (labels.size() != fwd.batch) throw ArgumentError("backward: labels do not match the cached batch");
  if (fwd.logits.size() != fwd.batch * net.classes) throw ArgumentError("backward: forward cache does not match net");
  const std::size_t batch = fwd.batch, classes = net.classes, c = net.conv2.c_out();
  const double inv_b = 1.0 / static_cast<double>(batch);

  // Head.
  std::vector<double> d_logits(batch * classes);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto p = softmax_row(std::span<const double>(fwd.logits).subspan(b * classes, classes));
    for (std::size_t o = 0; o < classes; ++o)
      d_logits[b * classes + o] = (p[o] - (static_cast<int>(o) == labels[b] ? 1.0 : 0.0)) * inv_b;
  }
  std::vector<double> d_head_w(classes * c, 0.0), d_head_b(classes, 0.0), d_pooled(batch * c, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < classes; ++o) {
      const double g = d_logits[b * classes + o];
      d_head_b[o] += g;
      for (std::size_t k = 0; k < c; ++k) {
        d_head_w[o * c + k] += g * fwd.pooled[b * c + k];
        d_pooled[b * c + k] += g * net.head_weights[o * c + k];
      }
    }

  // Global average pool.
  Planes d_h2 = zeros_like(fwd.layer2.output);
  const double inv_n = 1.0 / static_cast<double>(d_h2.plane_size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < c; ++k) std::fill_n(d_h2.plane(b, k), d_h2.plane_size(), d_pooled[b * c + k] * inv_n);

  auto g2 = backprop_layer(fwd.layer2, d_h2, net.conv2, net.mode, net.affine2, fwd.spectra.layer2, true);
  auto g1 = backprop_layer(fwd.layer1, g2.input, net.conv1, net.mode, net.affine1, fwd.spectra.layer1, false);

  std::vector<double> grad;
  grad.reserve(net.parameter_count());
  for (const auto* part : {&g1.kernels, &g2.kernels, &g1.affine, &g2.affine, &d_head_w, &d_head_b})
    grad.insert(grad.end(), part->begin(), part->end());
  return grad;
}

GradcheckResult gradcheck_detailed(const ToyConvNet& net, const ActivationBatch& batch, std::span<const int> labels,
                                   double h) {
  const auto base = forward(net, batch);
  const auto analytic = backward(net, base, labels);
  const FrozenSpectra frozen = base.spectra;
  const FrozenSpectra* frozen_ptr = net.mode == NormMode::none ? nullptr : &frozen;
  auto params = net.parameters();

  const auto same_pattern = [](const LayerCache& a, const LayerCache& b) {
    const auto x = a.pre_relu.values().data(), y = b.pre_relu.values().data();
    for (std::size_t i = 0; i < x.size(); ++i)
      if ((x[i] > 0.0) != (y[i] > 0.0)) return false;
    return true;
  };

  GradcheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const auto up = forward(net.with_parameters(params), batch, frozen_ptr);
    params[i] = saved - h;
    const auto down = forward(net.with_parameters(params), batch, frozen_ptr);
    params[i] = saved;

    if (!same_pattern(up.layer1, base.layer1) || !same_pattern(up.layer2, base.layer2) ||
        !same_pattern(down.layer1, base.layer1) || !same_pattern(down.layer2, base.layer2)) {
      ++result.kink_skipped;
      continue;
    }
    const double fd = (cross_entropy(up.logits, labels, net.classes) -
                       cross_entropy(down.logits, labels, net.classes)) / (2.0 * h);
    const double err = std::abs(fd - analytic[i]) / std::max(1e-8, std::abs(fd) + std::abs(analytic[i]));
    result.max_relative_error = std::max(result.max_relative_error, err);
    ++result.checked;
  }
  return result;
}

double gradcheck(const ToyConvNet& net, const ActivationBatch& batch, std::span<const int> labels, double h) {
  return gradcheck_detailed(net, batch, labels, h).max_relative_error;
}

SyntheticTask generate_synthetic_task(const TaskConfig& config) {
  if (config.classes < 2) throw ArgumentError("generate_synthetic_task: need at least 2 classes");
  if (config.height == 0 || config.width == 0) throw ArgumentError("generate_synthetic_task: empty grid");
  std::mt19937_64 rng(config.seed);
  SyntheticTask task;
  task.config = config;

  // Each class template is a sum of cosine gratings with distinct nonzero
  // wave vectors and random phases, scaled to unit RMS.
  const std::size_t h = config.height, w = config.width, n = h * w;
  const int max_freq = static_cast<int>(std::min<std::size_t>(4, std::min(h, w) / 2));
  std::uniform_int_distribution<int> freq(-max_freq, max_freq);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (std::size_t c = 0; c < config.classes; ++c) {
    std::vector<double> t(n, 0.0);
    std::vector<std::pair<int, int>> used;
    while (used.size() < config.components) {
      const std::pair<int, int> kv{freq(rng), freq(rng)};
      const std::pair<int, int> neg{-kv.first, -kv.second};
      if (kv == std::pair{0, 0} || std::ranges::find(used, kv) != used.end() ||
          std::ranges::find(used, neg) != used.end())
        continue;
      used.push_back(kv);
      const double phi = phase(rng);
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double arg = 2.0 * std::numbers::pi *
                             (kv.first * static_cast<double>(i) / static_cast<double>(h) +
                              kv.second * static_cast<double>(j) / static_cast<double>(w));
          t[i * w + j] += std::cos(arg + phi);
        }
    }
    double ss = 0.0;
    for (double x : t) ss += x * x;
    const double scale = ss > 0.0 ? std::sqrt(static_cast<double>(n) / ss) : 1.0;
    for (double& x : t) x *= scale;
    task.templates.emplace_back(Shape{h, w}, std::move(t));
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto make_split = [&](std::size_t count, std::vector<int>& labels) {
    std::vector<double> values(count * n);
    labels.resize(count);
    for (std::size_t s = 0; s < count; ++s) {
      const auto label = static_cast<int>(s % config.classes);
      labels[s] = label;
      const auto& tpl = task.templates[static_cast<std::size_t>(label)];
      for (std::size_t i = 0; i < n; ++i) {
        const double noise = gauss(rng);
        values[s * n + i] = tpl[i] + config.noise * noise;
      }
    }
    return ActivationBatch(count, 1, h, w, std::move(values));
  };
  task.train_x = make_split(config.n_train, task.train_y);
  task.test_x = make_split(config.n_test, task.test_y);
  return task;
}

std::optional<std::size_t> TrainTrace::iterations_to_accuracy(double threshold) const {
  const std::size_t window = std::max<std::size_t>(1, iterations_per_epoch);
  for (std::size_t end = window; end <= iterations.size(); ++end) {
    double sum = 0.0;
    for (std::size_t i = end - window; i < end; ++i) sum += iterations[i].train_accuracy;
    if (sum / static_cast<double>(window) >= threshold) return end;
  }
  return std::nullopt;
}

TrainTrace train(ToyConvNet& net, const SyntheticTask& task, const TrainConfig& config) {
  if (config.batch_size == 0) throw ArgumentError("train: batch size must be positive");
  if (net.mode != config.mode) throw ArgumentError("train: net mode and config mode differ");
  net.epsilon = config.epsilon;

  TrainTrace trace;
  trace.config = config;
  const std::size_t n_train = task.train_y.size();
  trace.iterations_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  const std::size_t total = trace.iterations_per_epoch * config.epochs;

  EvalAverageState avg1, avg2;
  avg1.cap = avg2.cap = config.rampdown_horizon ? config.rampdown_horizon : std::max<std::size_t>(1, total);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(n_train);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs && !trace.diverged; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(config.batch_size, n_train - start));
      const auto xb = gather(task.train_x, rows);
      std::vector<int> yb;
      for (auto r : rows) yb.push_back(task.train_y[r]);

      ForwardResult fwd;
      try {
        fwd = forward(net, xb);
      } catch (const FormatError&) {
        // Activations overflowed to non-finite values.
        trace.diverged = true;
        break;
      }
      const double loss = cross_entropy(fwd.logits, yb, net.classes);
      ++step;
      trace.iterations.push_back({step, loss, accuracy(fwd.logits, yb, net.classes)});
      if (!std::isfinite(loss)) {
        trace.diverged = true;
        break;
      }

      const auto grad = backward(net, fwd, yb);
      auto params = net.parameters();
      bool finite = true;
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= config.learning_rate * grad[i];
        finite = finite && std::isfinite(params[i]);
      }
      if (!finite) {
        trace.diverged = true;
        break;
      }
      if (net.mode != NormMode::none) {
        avg1 = update_eval_average(std::move(avg1), fwd.spectra.layer1, step);
        avg2 = update_eval_average(std::move(avg2), fwd.spectra.layer2, step);
      }
      net = net.with_parameters(params);
    }
    if (trace.diverged) break;

    FrozenSpectra eval;
    const FrozenSpectra* eval_ptr = nullptr;
    if (net.mode != NormMode::none && !avg1.empty()) {
      eval = {avg1.as_spectrum(), avg2.as_spectrum()};
      eval_ptr = &eval;
    }
    const auto test = forward(net, task.test_x, eval_ptr);
    trace.epochs.push_back({epoch + 1, accuracy(test.logits, task.test_y, net.classes)});
  }
  return trace;
}

std::string trace_to_csv(const TrainTrace& trace) {
  std::string out = "iteration,loss,train_acc\n";
  for (const auto& r : trace.iterations)
    out += std::to_string(r.iteration) + "," + format_double(r.loss) + "," + format_double(r.train_accuracy) + "\n";
  return out;
}

std::string trace_header_json(const TrainTrace& trace, int indent) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(trace.config.mode));
  j["learning_rate"] = trace.config.learning_rate;
  j["epsilon"] = trace.config.epsilon;
  j["seed"] = trace.config.seed;
  j["epochs"] = trace.config.epochs;
  j["batch_size"] = trace.config.batch_size;
  j["iterations"] = trace.iterations.size();
  j["iterations_per_epoch"] = trace.iterations_per_epoch;
  j["diverged"] = trace.diverged;
  const auto hit = trace.iterations_to_accuracy(0.9);
  j["iterations_to_90"] = hit ? nlohmann::ordered_json(*hit) : nlohmann::ordered_json(nullptr);
  auto& test = j["test_accuracy"] = nlohmann::ordered_json::array();
  for (const auto& e : trace.epochs) test.push_back({{"epoch", e.epoch}, {"test_acc", e.test_accuracy}});
  return j.dump(indent);
}

ConvergenceDemo make_convergence_demo(std::uint64_t seed, NormMode mode, double epsilon) {
  ConvergenceDemo demo;
  demo.task.seed = seed;
  demo.baseline.seed = seed;
  demo.baseline.epochs = 30;
  demo.baseline.batch_size = 16;
  demo.baseline.mode = NormMode::none;
  demo.baseline.epsilon = epsilon;
  demo.normalized = demo.baseline;
  demo.normalized.mode = mode;
  return demo;
}

void run_convergence_demo(ConvergenceDemo& demo) {
  const auto task = generate_synthetic_task(demo.task);
  auto base = ToyConvNet::init(demo.baseline.mode, demo.baseline.seed);
  demo.baseline_trace = train(base, task, demo.baseline);
  auto norm = ToyConvNet::init(demo.normalized.mode, demo.normalized.seed);
  demo.normalized_trace = train(norm, task, demo.normalized);
}

std::string ConvergenceDemo::comparison_json(int indent) const {
  auto hits = [](const TrainTrace& t) {
    const auto h = t.iterations_to_accuracy(0.9);
    return h ? nlohmann::ordered_json(*h) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["task_seed"] = task.seed;
  j["task_noise"] = task.noise;
  j["baseline_mode"] = std::string(to_string(baseline.mode));
  j["normalized_mode"] = std::string(to_string(normalized.mode));
  j["baseline_iterations_to_90"] = hits(baseline_trace);
  j["normalized_iterations_to_90"] = hits(normalized_trace);
  const auto b = baseline_trace.iterations_to_accuracy(0.9), n = normalized_trace.iterations_to_accuracy(0.9);
  j["speedup"] = b && n ? nlohmann::ordered_json(static_cast<double>(*b) / static_cast<double>(*n))
                        : nlohmann::ordered_json(nullptr);
  j["baseline_final_loss"] = baseline_trace.iterations.empty() ? 0.0 : baseline_trace.iterations.back().loss;
  j["normalized_final_loss"] = normalized_trace.iterations.empty() ? 0.0 : normalized_trace.iterations.back().loss;
  return j.dump(indent);
}

}  // namespace convnorm
