// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "m21/rng.hpp"
#include "m21/tensor.hpp"

// Colorized MNIST: every MNIST digit multiplied by one uniformly drawn RGB
// color, stored in bytes next to its grayscale source.
namespace m21::cmnist {

inline constexpr int kSide = 28;
inline constexpr int kPixels = kSide * kSide;
inline constexpr int kModelSide = 32;

using GrayImage = std::array<std::uint8_t, kPixels>;
using ColorImage = std::array<std::uint8_t, kPixels * 3>;  // HWC, RGB
using ColorVector = std::array<float, 3>;

/// Malformed input file; offset is the byte position where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

struct MnistItem {
  GrayImage image;
  std::uint8_t label;
};

struct PairedSample {
  ColorImage color;
  GrayImage gray;
  ColorVector c;
  std::uint8_t label;
  bool operator==(const PairedSample&) const = default;
};

enum class Split { Train, Test };

struct PairedDataset {
  std::vector<PairedSample> samples;
  std::uint64_t seed = 0;
  Split split = Split::Train;  // not part of the CMN1 container
  bool operator==(const PairedDataset&) const = default;
};

/// Reads an IDX image/label pair (big-endian headers). Gzip-compressed files
/// are decompressed transparently.
std::vector<MnistItem> load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Each channel uniform on [0, 1].
ColorVector sample_color(Rng& rng);

/// out[p][k] = round(c[k] * gray[p]), halves rounded away from zero.
ColorImage colorize(const GrayImage& gray, const ColorVector& c);

/// Sample i pairs mnist[i] with the i-th color drawn from Rng(seed).
PairedDataset generate_dataset(std::span<const MnistItem> mnist, std::uint64_t seed, std::size_t count,
                               Split split = Split::Train);

std::vector<std::uint8_t> serialize(const PairedDataset& ds);
PairedDataset deserialize(std::span<const std::uint8_t> bytes, Split split = Split::Train);
void write_dataset(const PairedDataset& ds, const std::filesystem::path& path);
PairedDataset read_dataset(const std::filesystem::path& path, Split split = Split::Train);

// ---- model-space conversion -------------------------------------------------
// Bytes map to [-1, 1]; 28x28 images are centred in a 32x32 canvas filled with -1.

float byte_to_model(std::uint8_t b);
std::uint8_t model_to_byte(float f);

/// Stacks 28x28xC byte images into a [N,32,32,C] tensor.
Tensor to_model_tensor(std::span<const std::span<const std::uint8_t>> images, int channels);
Tensor to_model_tensor(std::span<const std::uint8_t> image, int channels);
/// Crops sample `index` of a [N,32,32,C] tensor back to 28x28xC bytes.
std::vector<std::uint8_t> from_model_tensor(const Tensor& t, std::int64_t index = 0);

}  // namespace m21::cmnist
