// SPDX-License-Identifier: Apache-2.0
#include "io/bytes.hpp"
#include "m21/model.hpp"

namespace m21::gan {

namespace {
constexpr char kMagic[] = "M21C";
constexpr std::uint16_t kVersion = 1;

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  io::Writer w;
  w.str(kMagic);
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint64_t>(ck.fingerprint);
  w.le<std::uint64_t>(ck.step);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.config.size()));
  w.str(ck.config);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& [name, t] : ck.blobs) {
    if (name.size() > 0xFFFF) throw ContractError("checkpoint: blob name too long");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.str(name);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.le<float>(v);
  }
  w.le<std::uint32_t>(io::crc32(w.out));
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "M21C");
  if (r.str(4) != kMagic) throw cmnist::ParseError("M21C: bad magic at offset 0", 0);
  if (const auto v = r.le<std::uint16_t>(); v != kVersion) {
    throw cmnist::ParseError("M21C: unsupported version " + std::to_string(v), 4);
  }
  if (bytes.size() < 4 + 2 + 4) throw cmnist::ParseError("M21C: truncated", bytes.size());
  const auto stored = io::Reader(bytes.last(4), "M21C").le<std::uint32_t>();
  if (io::crc32(bytes.first(bytes.size() - 4)) != stored) {
    throw cmnist::ParseError("M21C: checksum mismatch", bytes.size() - 4);
  }
  Checkpoint ck;
  ck.fingerprint = r.le<std::uint64_t>();
  ck.step = r.le<std::uint64_t>();
  ck.config = r.str(r.le<std::uint32_t>());
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.le<std::uint16_t>());
    const auto rank = r.le<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint32_t>();
    Tensor t(shape);
    for (auto& v : t.mutable_data()) v = r.le<float>();
    ck.blobs.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining() != 4) throw cmnist::ParseError("M21C: trailing bytes before checksum", r.pos());
  return ck;
}

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return deserialize_checkpoint(bytes);
  } catch (const cmnist::ParseError& e) {
    throw cmnist::ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

Checkpoint model_checkpoint(const Model& model, std::string config) {
  Checkpoint ck;
  ck.fingerprint = model.config().fingerprint();
  ck.step = model.step;
  ck.config = std::move(config);
  for (const auto& e : model.params().entries()) ck.blobs.emplace_back(e.name, e.value.clone());
  return ck;
}

void load_model(Model& model, const Checkpoint& ck) {
  if (ck.fingerprint != model.config().fingerprint()) {
    throw ContractError("checkpoint fingerprint " + hex(ck.fingerprint) + " does not match model " +
                        hex(model.config().fingerprint()) + " (" + model.config().canonical() + ")");
  }
  std::map<std::string_view, const Tensor*> blobs;
  for (const auto& [name, t] : ck.blobs) blobs.emplace(name, &t);
  for (const auto& e : model.params().entries()) {
    auto it = blobs.find(e.name);
    if (it == blobs.end()) throw Error("checkpoint: missing parameter " + e.name);
    if (it->second->shape() != e.value.shape()) {
      throw Error("checkpoint: parameter " + e.name + " has shape " + shape_str(it->second->shape()) + ", model expects " +
                  shape_str(e.value.shape()));
    }
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), Tensor(e.value).mutable_data().begin());
  }
  model.step = ck.step;
}

}  // namespace m21::gan
