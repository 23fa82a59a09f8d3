#pragma once

// AFT1 binary tensor files: "AFT1", u32 rank, rank x u32 dims, then row-major
// f32 values, all little-endian. Complex data carries a trailing dim of 2.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "amfm/error.hpp"
#include "amfm/image.hpp"

namespace amfm {

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw ValidationError("truncated tensor header");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

}  // namespace detail

inline void write_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open for writing: " + path.string());
  os.write("AFT1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw ValidationError("write failed: " + path.string());
}

inline Tensor<float> read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open tensor: " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || std::memcmp(magic.data(), "AFT1", 4) != 0)
    throw ValidationError("bad tensor magic in " + path.string());
  const std::uint32_t rank = detail::get_u32(is);
  if (rank == 0 || rank > 16) throw ValidationError("unsupported tensor rank in " + path.string());
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) {
    d = detail::get_u32(is);
    if (d == 0) throw ValidationError("zero tensor extent in " + path.string());
  }
  std::vector<float> data(Tensor<float>::count(dims));
  for (auto& v : data) v = std::bit_cast<float>(detail::get_u32(is));
  return Tensor<float>(std::move(dims), std::move(data));
}

inline Tensor<float> to_tensor(const RealImage& img) {
  return Tensor<float>({img.rows(), img.cols()}, img.data());
}

inline Tensor<float> to_tensor(const IndexImage& img) {
  std::vector<float> v(img.data().begin(), img.data().end());
  return Tensor<float>({img.rows(), img.cols()}, std::move(v));
}

inline Tensor<float> to_tensor(const Image<cdouble>& img) {
  std::vector<float> v;
  v.reserve(img.size() * 2);
  for (const auto& z : img.data()) {
    v.push_back(static_cast<float>(z.real()));
    v.push_back(static_cast<float>(z.imag()));
  }
  return Tensor<float>({img.rows(), img.cols(), 2}, std::move(v));
}

inline Tensor<float> to_tensor(const ComplexImage& img) {
  std::vector<float> v;
  v.reserve(img.size() * 2);
  for (const auto& z : img.data()) {
    v.push_back(z.real());
    v.push_back(z.imag());
  }
  return Tensor<float>({img.rows(), img.cols(), 2}, std::move(v));
}

inline RealImage real_image_from(const Tensor<float>& t) {
  if (t.rank() != 2) throw ValidationError("expected a rank-2 tensor for a real image");
  return RealImage(t.dims()[0], t.dims()[1], t.data());
}

inline Image<cdouble> complex_image_from(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dims()[2] != 2)
    throw ValidationError("expected a rows x cols x 2 tensor for a complex image");
  Image<cdouble> out(t.dims()[0], t.dims()[1]);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = {t[2 * i], t[2 * i + 1]};
  return out;
}

}  // namespace amfm
