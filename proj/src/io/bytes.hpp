// SPDX-License-Identifier: Apache-2.0
// Bounds-checked cursor over a byte buffer, shared by the file parsers.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "m21/cmnist.hpp"

namespace m21::io {

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw cmnist::ParseError(what_ + ": truncated at offset " + std::to_string(pos_) + " (need " +
                                   std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                                   " left)",
                               pos_);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t be32() {
    auto b = take(4);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }
  template <typename T>
  T le() {
    auto b = take(sizeof(T));
    T v{};
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      U u = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(b[i]) << (8 * i);
      std::memcpy(&v, &u, sizeof(T));
    } else {
      for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b[i]) << (8 * i));
    }
    return v;
  }
  std::string str(std::size_t n) {
    auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& what() const { return what_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

class Writer {
 public:
  template <typename T>
  void le(T v) {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      U u;
      std::memcpy(&u, &v, sizeof(T));
      le(u);
    } else {
      for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  void bytes(std::span<const std::uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }
  void str(const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> out;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
/// Whole file, gunzipped if it carries a gzip header.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace m21::io
