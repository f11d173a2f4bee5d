#include "convnorm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace convnorm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > 4)
    throw FormatError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
  for (auto e : shape_)
    if (e == 0) throw FormatError("tensor extents must be positive: " + shape_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw FormatError("tensor payload length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_string(shape_));
  for (std::size_t i = 0; i < data_.size(); ++i)
    if (!std::isfinite(data_[i]))
      throw FormatError("non-finite tensor value at flat index " + std::to_string(i));
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::from_vector(std::vector<double> data) {
  Shape s{data.size()};
  return Tensor(std::move(s), std::move(data));
}

KernelStack::KernelStack(Tensor weights) : weights_(std::move(weights)) {
  if (weights_.rank() != 4)
    throw ArgumentError("kernel stack needs a rank-4 tensor, got shape " + shape_string(weights_.shape()));
  c_out_ = weights_.extent(0);
  c_in_ = weights_.extent(1);
  k1_ = weights_.extent(2);
  k2_ = weights_.extent(3);
}

KernelStack::KernelStack(std::size_t c_out, std::size_t c_in, std::size_t k1, std::size_t k2,
                         std::vector<double> weights)
    : KernelStack(Tensor({c_out, c_in, k1, k2}, std::move(weights))) {}

std::span<const double> KernelStack::kernel(std::size_t out, std::size_t in) const {
  const std::size_t n = k1_ * k2_;
  return weights_.data().subspan((out * c_in_ + in) * n, n);
}

double KernelStack::at(std::size_t out, std::size_t in, std::size_t p, std::size_t q) const {
  return kernel(out, in)[p * k2_ + q];
}

KernelStack KernelStack::scaled(double c) const {
  std::vector<double> w(weights_.data().begin(), weights_.data().end());
  for (auto& x : w) x *= c;
  return KernelStack(c_out_, c_in_, k1_, k2_, std::move(w));
}

ActivationBatch::ActivationBatch(Tensor values) : values_(std::move(values)) {
  if (values_.rank() != 4)
    throw ArgumentError("activation batch needs a rank-4 tensor, got shape " +
                        shape_string(values_.shape()));
  batch_ = values_.extent(0);
  channels_ = values_.extent(1);
  height_ = values_.extent(2);
  width_ = values_.extent(3);
}

ActivationBatch::ActivationBatch(std::size_t batch, std::size_t channels, std::size_t height,
                                 std::size_t width, std::vector<double> values)
    : ActivationBatch(Tensor({batch, channels, height, width}, std::move(values))) {}

std::span<const double> ActivationBatch::plane(std::size_t item, std::size_t channel) const {
  const std::size_t n = plane_size();
  return values_.data().subspan((item * channels_ + channel) * n, n);
}

namespace {

// Row-major strides for a shape.
std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

Tensor zero_pad(const Tensor& t, std::span<const std::pair<std::size_t, std::size_t>> pads) {
  if (pads.size() != t.rank())
    throw ArgumentError("zero_pad: " + std::to_string(pads.size()) + " pad pairs for rank " +
                        std::to_string(t.rank()));
  Shape out_shape = t.shape();
  for (std::size_t a = 0; a < pads.size(); ++a) out_shape[a] += pads[a].first + pads[a].second;

  const auto in_strides = strides_of(t.shape());
  const auto out_strides = strides_of(out_shape);
  std::vector<double> out(shape_size(out_shape), 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::size_t rem = i, dst = 0;
    for (std::size_t a = 0; a < t.rank(); ++a) {
      const std::size_t idx = rem / in_strides[a];
      rem %= in_strides[a];
      dst += (idx + pads[a].first) * out_strides[a];
    }
    out[dst] = t[i];
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor zero_pad(const Tensor& t, std::initializer_list<std::pair<std::size_t, std::size_t>> pads) {
  return zero_pad(t, std::span<const std::pair<std::size_t, std::size_t>>(pads.begin(), pads.size()));
}

Tensor downsample(const Tensor& t, std::size_t stride) {
  if (stride == 0) throw ArgumentError("downsample: stride must be >= 1");
  if (stride == 1) return t;
  const std::size_t first_spatial = t.rank() <= 2 ? 0 : t.rank() - 2;
  Shape out_shape = t.shape();
  for (std::size_t a = first_spatial; a < t.rank(); ++a)
    out_shape[a] = (out_shape[a] + stride - 1) / stride;

  const auto in_strides = strides_of(t.shape());
  const auto out_strides = strides_of(out_shape);
  std::vector<double> out(shape_size(out_shape));
  for (std::size_t o = 0; o < out.size(); ++o) {
    std::size_t rem = o, src = 0;
    for (std::size_t a = 0; a < t.rank(); ++a) {
      std::size_t idx = rem / out_strides[a];
      rem %= out_strides[a];
      if (a >= first_spatial) idx *= stride;
      src += idx * in_strides[a];
    }
    out[o] = t[src];
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor flip_kernel(const Tensor& a) {
  if (a.rank() > 2) throw ArgumentError("flip_kernel expects a 1D or 2D tensor");
  const std::size_t rows = a.rank() == 2 ? a.extent(0) : 1;
  const std::size_t cols = a.rank() == 2 ? a.extent(1) : a.extent(0);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[((rows - i) % rows) * cols + (cols - j) % cols] = a[i * cols + j];
  return Tensor(a.shape(), std::move(out));
}

}  // namespace convnorm
