#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace convnorm {

/// Raised for malformed arguments: bad extents, mismatched shapes, zero stride.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a CNT1 file or an in-memory payload violates the format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles, rank 1 to 4.
///
/// Immutable once built. The constructor rejects non-finite values and a
/// payload whose length disagrees with the shape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor from_vector(std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Moves the payload out, leaving this tensor empty.
  std::vector<double> release() && { return std::move(data_); }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Layer weights of shape (c_out, c_in, k1, k2). 1D kernels use k2 = 1.
class KernelStack {
 public:
  KernelStack() = default;
  explicit KernelStack(Tensor weights);
  KernelStack(std::size_t c_out, std::size_t c_in, std::size_t k1, std::size_t k2,
              std::vector<double> weights);

  std::size_t c_out() const noexcept { return c_out_; }
  std::size_t c_in() const noexcept { return c_in_; }
  std::size_t k1() const noexcept { return k1_; }
  std::size_t k2() const noexcept { return k2_; }
  const Tensor& weights() const noexcept { return weights_; }

  /// The k1 x k2 spatial kernel a_kj, row-major.
  std::span<const double> kernel(std::size_t out, std::size_t in) const;
  double at(std::size_t out, std::size_t in, std::size_t p, std::size_t q) const;

  KernelStack scaled(double c) const;

 private:
  std::size_t c_out_ = 0, c_in_ = 0, k1_ = 0, k2_ = 0;
  Tensor weights_;
};

/// Activations of shape (batch, channels, height, width).
class ActivationBatch {
 public:
  ActivationBatch() = default;
  explicit ActivationBatch(Tensor values);
  ActivationBatch(std::size_t batch, std::size_t channels, std::size_t height,
                  std::size_t width, std::vector<double> values);

  std::size_t batch() const noexcept { return batch_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept { return height_ * width_; }
  const Tensor& values() const noexcept { return values_; }

  /// One H x W plane, row-major.
  std::span<const double> plane(std::size_t item, std::size_t channel) const;

  bool operator==(const ActivationBatch&) const = default;

 private:
  std::size_t batch_ = 0, channels_ = 0, height_ = 0, width_ = 0;
  Tensor values_;
};

/// Pads each axis by (left, right) zeros; pads.size() must equal the rank.
Tensor zero_pad(const Tensor& t, std::span<const std::pair<std::size_t, std::size_t>> pads);
Tensor zero_pad(const Tensor& t, std::initializer_list<std::pair<std::size_t, std::size_t>> pads);

/// Keeps indices 0, s, 2s, ... along each spatial axis. For rank 1 and 2 all
/// axes are spatial; for rank 3 and 4 the trailing two.
Tensor downsample(const Tensor& t, std::size_t stride);

/// Cyclic reversal along every axis of a 1D or 2D tensor: index 0 stays,
/// index i moves to (n - i) mod n.
Tensor flip_kernel(const Tensor& a);

}  // namespace convnorm
