#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "ssr/core/error.hpp"

namespace ssr {

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string content_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io_missing_file, "content_hash: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
  return hex64(h);
}

inline std::string string_hash(const std::string& s) { return hex64(fnv1a64(s.data(), s.size())); }

}  // namespace ssr
