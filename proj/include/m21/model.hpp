// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "m21/tensor.hpp"

// Asymmetric StarGAN-v2-style translator between a multi-modal color domain
// A and a uni-modal grayscale domain B, working in a 3-channel shared space S
// at 32x32.
namespace m21::gan {

enum class DomainId { A = 0, B = 1 };
enum class Modality { Uni, Multi };

struct Domain {
  DomainId id;
  int channels;
  Modality modality;
  const char* name;
};

inline constexpr Domain kDomainA{DomainId::A, 3, Modality::Multi, "A"};
inline constexpr Domain kDomainB{DomainId::B, 1, Modality::Uni, "B"};
const Domain& domain(DomainId id);
inline bool is_multi(DomainId id) { return domain(id).modality == Modality::Multi; }
inline DomainId other(DomainId id) { return id == DomainId::A ? DomainId::B : DomainId::A; }

inline constexpr int kSharedChannels = 3;

struct ModelConfig {
  int base_channels = 16;
  int max_channels = 32;
  int style_dim = 16;
  int latent_dim = 16;
  int mapping_hidden = 64;
  /// Negative slope of every leaky ReLU. 1 makes the networks kink-free,
  /// which finite-difference checks of deep parameters rely on.
  float leaky_slope = 0.2f;
  /// Zero-style gating for the uni-modal domain. Off reproduces the
  /// symmetric baseline, where any style may target either domain.
  bool gating = true;
  std::uint64_t init_seed = 0;

  /// Channel widths at 32x32, 16x16 and 8x8 and below.
  int width(int level) const;
  std::string canonical() const;
  /// FNV-1a of canonical(); checkpoints refuse to load across fingerprints.
  std::uint64_t fingerprint() const;
};

struct ZeroStyle {};
struct LatentStyle {
  Tensor z;  // [N, latent_dim]
};
struct GuideStyle {
  Tensor image;  // reference images already in the target domain
};
using StyleSource = std::variant<ZeroStyle, LatentStyle, GuideStyle>;

class Model;

/// A style vector batch that went through Model::resolve_style, which is the
/// only place the uni-modal gating rule is applied.
class Style {
 public:
  const Tensor& vector() const { return s_; }
  bool is_zero() const { return zero_; }
  /// Same values, cut from the tape.
  Style detached() const { return Style(s_.detach(), zero_); }

 private:
  friend class Model;
  Style(Tensor s, bool zero) : s_(std::move(s)), zero_(zero) {}
  Tensor s_;
  bool zero_;
};

/// Ordered named parameters. Tensors are shared handles: mutating data()
/// through a returned handle updates the model.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };
  Tensor add(std::string name, Tensor init);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> with_prefix(std::string_view prefix) const;
  std::int64_t numel(std::string_view prefix = "") const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t step = 0;

  /// 1x1 mapping from the domain's channels into S, and back.
  Tensor channel_encode(const Tensor& x, DomainId d) const;
  Tensor channel_decode(const Tensor& h, DomainId d) const;
  /// Shared-space translation; s is [N, style_dim]. No output activation.
  Tensor generator_forward(const Tensor& h, const Tensor& s) const;
  Tensor style_encode(const Tensor& x, DomainId d) const;
  Tensor map_latent(const Tensor& z, DomainId d) const;
  /// One logit per sample, shape [N].
  Tensor discriminate(const Tensor& x, DomainId d) const;

  /// ZeroStyle becomes a literal zero matrix. With gating on, any other
  /// source for a uni-modal target raises ContractError.
  Style resolve_style(const StyleSource& source, DomainId target, std::int64_t batch) const;
  /// tanh(channel_decode(G(channel_encode(x), s), target)).
  Tensor generate(const Tensor& x, DomainId source, DomainId target, const Style& style) const;
  Tensor translate(const Tensor& x, DomainId source, DomainId target, const StyleSource& style) const;

  /// Parameters of the demodulation dense layers (weights only, not biases).
  std::vector<Tensor> demod_dense_weights() const;
  std::vector<Tensor> mapper_params() const { return params_.with_prefix("C."); }

 private:
  Tensor P(std::string_view name) const { return params_.at(name); }
  Tensor act(const Tensor& x) const;
  Tensor res_block(const Tensor& x, const std::string& prefix, int cin, int cout, bool down, bool norm) const;
  Tensor mod_res_block(const Tensor& x, const Tensor& s, const std::string& prefix, int cin, int cout, bool up) const;
  Tensor conv_trunk(const Tensor& h, const std::string& prefix) const;
  void check_image(const char* op, const Tensor& x, int channels) const;

  ModelConfig config_;
  ParamStore params_;
};

// ---- checkpoints (M21C) --------------------------------------------------------

struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::uint64_t step = 0;
  std::string config;  // free-form description stored alongside, e.g. a JSON run config
  std::vector<std::pair<std::string, Tensor>> blobs;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Model parameters under their own names, plus the step counter.
Checkpoint model_checkpoint(const Model& model, std::string config = {});
/// Copies matching blobs into the model. Throws ContractError on a
/// fingerprint mismatch and Error on a missing or misshapen parameter.
void load_model(Model& model, const Checkpoint& ck);

}  // namespace m21::gan
