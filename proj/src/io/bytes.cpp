// SPDX-License-Identifier: Apache-2.0
#include "io/bytes.hpp"

#include <zlib.h>

#include <fstream>
#include <memory>

namespace m21::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks to stay within range.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t i = 0; i < bytes.size(); i += kChunk) {
    const auto n = std::min(kChunk, bytes.size() - i);
    crc = ::crc32(crc, bytes.data() + i, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error("cannot open " + path.string() + ": no such file");
  // gzread passes uncompressed files through unchanged.
  std::unique_ptr<gzFile_s, int (*)(gzFile)> f(gzopen(path.c_str(), "rb"), gzclose);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> data;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(f.get(), buf, sizeof buf);
    if (n < 0) {
      int code = 0;
      throw Error("read error in " + path.string() + ": " + gzerror(f.get(), &code));
    }
    if (n == 0) break;
    data.insert(data.end(), buf, buf + n);
  }
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace m21::io
