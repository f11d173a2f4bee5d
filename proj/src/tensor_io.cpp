#include "convnorm/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace convnorm {
namespace {

constexpr std::array<char, 4> kMagic{'C', 'N', 'T', '1'};

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
    throw FormatError(std::string("CNT1: truncated while reading ") + what);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
  for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw FormatError("CNT1: write failed");
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw FormatError("CNT1: bad magic bytes");
  const auto rank = get_le<std::uint32_t>(is, "rank");
  if (rank == 0 || rank > 4) throw FormatError("CNT1: rank must be 1..4, got " + std::to_string(rank));

  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    const auto extent = get_le<std::uint64_t>(is, "extent");
    if (extent == 0) throw FormatError("CNT1: zero extent");
    if (count > (std::uint64_t{1} << 40) / extent) throw FormatError("CNT1: shape too large");
    count *= extent;
    e = static_cast<std::size_t>(extent);
  }

  std::vector<double> data(count);
  for (auto& v : data) {
    std::uint64_t bits = 0;
    try {
      bits = get_le<std::uint64_t>(is, "payload");
    } catch (const FormatError&) {
      throw FormatError("CNT1: payload shorter than shape " + shape_string(shape));
    }
    v = std::bit_cast<double>(bits);
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("CNT1: trailing bytes after payload of shape " + shape_string(shape));
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return read_tensor(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace convnorm
