// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "io/bytes.hpp"
#include "m21/cmnist.hpp"

namespace m21::cmnist {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;
constexpr char kMagic[] = "CMN1";
constexpr std::uint16_t kVersion = 1;

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

}  // namespace

ParseError::ParseError(const std::string& what, std::uint64_t offset) : Error(what), offset_(offset) {}

std::vector<MnistItem> load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img_bytes = io::read_file(images);
  const auto lbl_bytes = io::read_file(labels);
  io::Reader img(img_bytes, images.string());
  io::Reader lbl(lbl_bytes, labels.string());

  if (const auto m = img.be32(); m != kImagesMagic) {
    throw ParseError(images.string() + ": bad IDX magic " + hex(m) + " at offset 0, expected " + hex(kImagesMagic), 0);
  }
  const auto count = img.be32();
  const auto rows = img.be32();
  const auto cols = img.be32();
  if (rows != kSide || cols != kSide) {
    throw ParseError(images.string() + ": images are " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", expected 28x28",
                     8);
  }
  if (const auto m = lbl.be32(); m != kLabelsMagic) {
    throw ParseError(labels.string() + ": bad IDX magic " + hex(m) + " at offset 0, expected " + hex(kLabelsMagic), 0);
  }
  const auto label_count = lbl.be32();
  if (label_count != count) {
    throw ParseError("IDX count mismatch: " + std::to_string(count) + " images in " + images.string() + " but " +
                         std::to_string(label_count) + " labels in " + labels.string(),
                     4);
  }

  std::vector<MnistItem> items(count);
  for (auto& item : items) {
    auto px = img.take(kPixels);
    std::copy(px.begin(), px.end(), item.image.begin());
    const auto at = lbl.pos();
    item.label = lbl.take(1)[0];
    if (item.label > 9) {
      throw ParseError(labels.string() + ": label " + std::to_string(item.label) + " at offset " + std::to_string(at),
                       at);
    }
  }
  return items;
}

ColorVector sample_color(Rng& rng) {
  ColorVector c;
  for (auto& v : c) v = static_cast<float>(rng.uniform());
  return c;
}

ColorImage colorize(const GrayImage& gray, const ColorVector& c) {
  ColorImage out;
  for (int p = 0; p < kPixels; ++p) {
    for (int k = 0; k < 3; ++k) {
      // std::round rounds halves away from zero; the product is exact in double.
      const double v = std::round(static_cast<double>(c[k]) * gray[p]);
      out[p * 3 + k] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

PairedDataset generate_dataset(std::span<const MnistItem> mnist, std::uint64_t seed, std::size_t count,
                               Split split) {
  if (count == 0) throw ContractError("generate_dataset: count must be positive");
  if (count > mnist.size()) {
    throw ContractError("generate_dataset: count " + std::to_string(count) + " exceeds the " +
                        std::to_string(mnist.size()) + " available MNIST images");
  }
  PairedDataset ds;
  ds.seed = seed;
  ds.split = split;
  ds.samples.resize(count);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    auto& s = ds.samples[i];
    s.gray = mnist[i].image;
    s.label = mnist[i].label;
    s.c = sample_color(rng);
    s.color = colorize(s.gray, s.c);
  }
  return ds;
}

std::vector<std::uint8_t> serialize(const PairedDataset& ds) {
  if (ds.samples.size() > 0xFFFFFFFFu) throw ContractError("serialize: too many samples for CMN1");
  io::Writer w;
  w.out.reserve(24 + ds.samples.size() * (1 + kPixels * 4 + 12) + 4);
  w.str(kMagic);
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ds.samples.size()));
  w.le<std::uint16_t>(kSide);
  w.le<std::uint16_t>(kSide);
  w.le<std::uint64_t>(ds.seed);
  for (const auto& s : ds.samples) {
    w.le<std::uint8_t>(s.label);
    w.bytes(s.gray);
    w.bytes(s.color);
    for (float v : s.c) w.le<float>(v);
  }
  w.le<std::uint32_t>(io::crc32(w.out));
  return std::move(w.out);
}

PairedDataset deserialize(std::span<const std::uint8_t> bytes, Split split) {
  io::Reader r(bytes, "CMN1");
  if (bytes.empty()) throw ParseError("CMN1: empty input, truncated at offset 0", 0);
  const auto magic = r.str(4);
  if (magic != kMagic) throw ParseError("CMN1: bad magic at offset 0", 0);
  if (const auto v = r.le<std::uint16_t>(); v != kVersion) {
    throw ParseError("CMN1: unsupported version " + std::to_string(v) + " at offset 4", 4);
  }
  const auto count = r.le<std::uint32_t>();
  const auto h = r.le<std::uint16_t>();
  const auto w = r.le<std::uint16_t>();
  if (h != kSide || w != kSide) throw ParseError("CMN1: image size must be 28x28", 10);
  PairedDataset ds;
  ds.split = split;
  ds.seed = r.le<std::uint64_t>();
  const std::size_t record = 1 + kPixels * 4 + 12;
  if (r.remaining() != static_cast<std::size_t>(count) * record + 4) {
    if (r.remaining() < static_cast<std::size_t>(count) * record + 4) {
      r.take(static_cast<std::size_t>(count) * record + 4);  // throws with the offset
    }
    throw ParseError("CMN1: " + std::to_string(r.remaining() - count * record - 4) + " trailing bytes", bytes.size());
  }
  const auto payload = bytes.first(bytes.size() - 4);
  const auto stored = io::Reader(bytes.last(4), "CMN1").le<std::uint32_t>();
  if (io::crc32(payload) != stored) throw ParseError("CMN1: checksum mismatch", bytes.size() - 4);

  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.label = r.take(1)[0];
    auto g = r.take(kPixels);
    std::copy(g.begin(), g.end(), s.gray.begin());
    auto c = r.take(kPixels * 3);
    std::copy(c.begin(), c.end(), s.color.begin());
    for (auto& v : s.c) v = r.le<float>();
  }
  return ds;
}

void write_dataset(const PairedDataset& ds, const std::filesystem::path& path) {
  io::write_file(path, serialize(ds));
}

PairedDataset read_dataset(const std::filesystem::path& path, Split split) {
  const auto bytes = io::read_file(path);
  try {
    return deserialize(bytes, split);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

// ---- model-space conversion -------------------------------------------------

float byte_to_model(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

std::uint8_t model_to_byte(float f) {
  const double v = std::round((static_cast<double>(f) + 1.0) * 127.5);
  if (!(v >= 0.0)) return 0;  // also maps NaN to 0
  return static_cast<std::uint8_t>(std::min(v, 255.0));
}

Tensor to_model_tensor(std::span<const std::span<const std::uint8_t>> images, int channels) {
  if (channels != 1 && channels != 3) throw ContractError("to_model_tensor: channels must be 1 or 3");
  const auto n = static_cast<std::int64_t>(images.size());
  constexpr int off = (kModelSide - kSide) / 2;
  Tensor t(Shape{n, kModelSide, kModelSide, channels}, -1.0f);
  auto dst = t.mutable_data();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& img = images[static_cast<std::size_t>(i)];
    if (img.size() != static_cast<std::size_t>(kPixels * channels)) {
      throw ShapeError("to_model_tensor: image " + std::to_string(i) + " has " + std::to_string(img.size()) +
                       " bytes, expected " + std::to_string(kPixels * channels));
    }
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x)
        for (int k = 0; k < channels; ++k)
          dst[((i * kModelSide + y + off) * kModelSide + x + off) * channels + k] =
              byte_to_model(img[(y * kSide + x) * channels + k]);
  }
  return t;
}

Tensor to_model_tensor(std::span<const std::uint8_t> image, int channels) {
  const std::span<const std::uint8_t> one[] = {image};
  return to_model_tensor(one, channels);
}

std::vector<std::uint8_t> from_model_tensor(const Tensor& t, std::int64_t index) {
  if (t.rank() != 4 || t.dim(1) != kModelSide || t.dim(2) != kModelSide) {
    throw ShapeError("from_model_tensor: expected [N,32,32,C], got " + shape_str(t.shape()));
  }
  if (index < 0 || index >= t.dim(0)) throw ShapeError("from_model_tensor: sample index out of range");
  const auto c = t.dim(3);
  constexpr int off = (kModelSide - kSide) / 2;
  auto src = t.data();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(kPixels * c));
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x)
      for (std::int64_t k = 0; k < c; ++k)
        out[(y * kSide + x) * c + k] = model_to_byte(src[((index * kModelSide + y + off) * kModelSide + x + off) * c + k]);
  return out;
}

}  // namespace m21::cmnist
