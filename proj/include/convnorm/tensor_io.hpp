#pragma once

#include <filesystem>
#include <iosfwd>

#include "convnorm/tensor.hpp"

namespace convnorm {

// CNT1 layout: "CNT1", u32 rank, rank x u64 extents, then the row-major
// payload as little-endian f64. All integers little-endian.

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace convnorm
