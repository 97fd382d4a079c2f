#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "ssr/core/error.hpp"
#include "ssr/core/tensor.hpp"

namespace ssr {

// ".tnsr" container: 16-byte header (magic "SSRT", version, dtype, rank,
// reserved zeros), then rank little-endian u32 dims, then the f32 payload in
// row-major order. dtype 1 == f32.
namespace tnsr {
constexpr char kMagic[4] = {'S', 'S', 'R', 'T'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr int kHeaderBytes = 16;
constexpr int kMaxRank = 4;
}  // namespace tnsr

inline void write_tensor(const Tensor& t, const std::string& path) {
  require(t.rank() <= tnsr::kMaxRank, Errc::invalid_argument, "write_tensor: rank must be <= 4");
  require(t.v.size() == Tensor::count(t.shape), Errc::invalid_argument,
          "write_tensor: payload size does not match shape");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io_unwritable, "write_tensor: cannot open " + path);

  unsigned char header[tnsr::kHeaderBytes] = {};
  std::memcpy(header, tnsr::kMagic, 4);
  header[4] = tnsr::kVersion;
  header[5] = tnsr::kDtypeF32;
  header[6] = static_cast<unsigned char>(t.rank());
  f.write(reinterpret_cast<const char*>(header), tnsr::kHeaderBytes);

  for (int d : t.shape) {
    std::uint32_t u = static_cast<std::uint32_t>(d);
    unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
                          static_cast<unsigned char>((u >> 8) & 0xff),
                          static_cast<unsigned char>((u >> 16) & 0xff),
                          static_cast<unsigned char>((u >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
  }
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(t.v.data()),
          static_cast<std::streamsize>(t.v.size() * sizeof(float)));
  require(f.good(), Errc::io_unwritable, "write_tensor: write failed for " + path);
}

inline Tensor read_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io_missing_file, "read_tensor: cannot open " + path);

  unsigned char header[tnsr::kHeaderBytes];
  f.read(reinterpret_cast<char*>(header), tnsr::kHeaderBytes);
  require(f.gcount() == tnsr::kHeaderBytes, Errc::tnsr_truncated, "read_tensor: truncated header in " + path);
  require(std::memcmp(header, tnsr::kMagic, 4) == 0, Errc::tnsr_bad_magic,
          "read_tensor: bad magic in " + path);
  require(header[4] == tnsr::kVersion, Errc::tnsr_version_mismatch,
          "read_tensor: unsupported version in " + path);
  require(header[5] == tnsr::kDtypeF32, Errc::tnsr_bad_header, "read_tensor: unsupported dtype in " + path);
  int rank = header[6];
  require(rank <= tnsr::kMaxRank, Errc::tnsr_bad_header, "read_tensor: rank > 4 in " + path);

  std::vector<int> shape(static_cast<std::size_t>(rank));
  std::size_t n = 1;
  for (int i = 0; i < rank; ++i) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    require(f.gcount() == 4, Errc::tnsr_truncated, "read_tensor: truncated dims in " + path);
    std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                      (static_cast<std::uint32_t>(b[2]) << 16) |
                      (static_cast<std::uint32_t>(b[3]) << 24);
    require(u >= 1, Errc::tnsr_bad_header, "read_tensor: zero dim in " + path);
    shape[static_cast<std::size_t>(i)] = static_cast<int>(u);
    n *= u;
  }

  Tensor t;
  t.shape = shape;
  t.v.resize(n);
  f.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  require(static_cast<std::size_t>(f.gcount()) == n * sizeof(float), Errc::tnsr_truncated,
          "read_tensor: truncated payload in " + path);
  return t;
}

}  // namespace ssr
