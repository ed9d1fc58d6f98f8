// SPDX-License-Identifier: Apache-2.0
#include "m21/model.hpp"

#include <cmath>

#include "m21/ops.hpp"
#include "m21/rng.hpp"

namespace m21::gan {

namespace {

constexpr float kInvSqrt2 = 0.70710678118654752f;

const char* tag(DomainId d) { return d == DomainId::A ? "A" : "B"; }

Tensor normal_init(Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

Tensor uniform_init(Rng& rng, Shape shape, double bound) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

/// Registers every parameter in a fixed order so that a seed fully
/// determines the initial model.
class Builder {
 public:
  Builder(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  // He initialisation for layers followed by (leaky) ReLU.
  void conv(const std::string& name, int kh, int cin, int cout, bool bias = true) {
    store_.add(name + ".w", normal_init(rng_, {kh, kh, cin, cout}, std::sqrt(2.0 / (kh * kh * cin))));
    if (bias) store_.add(name + ".b", Tensor(Shape{cout}, 0.0f));
  }
  void dense(const std::string& name, int din, int dout) {
    store_.add(name + ".w", normal_init(rng_, {din, dout}, std::sqrt(2.0 / din)));
    store_.add(name + ".b", Tensor(Shape{dout}, 0.0f));
  }
  // Modulation layer: bias 1 makes s = 0 the unit modulation.
  void modulation(const std::string& name, int style_dim, int channels) {
    store_.add(name + ".w", uniform_init(rng_, {style_dim, channels}, 1.0 / std::sqrt(style_dim)));
    store_.add(name + ".b", Tensor(Shape{channels}, 1.0f));
  }
  void norm(const std::string& name, int channels) {
    store_.add(name + ".g", Tensor(Shape{channels}, 1.0f));
    store_.add(name + ".b", Tensor(Shape{channels}, 0.0f));
  }
  void mapper(const std::string& name, int cin, int cout) {
    store_.add(name, normal_init(rng_, {1, 1, cin, cout}, 1.0 / std::sqrt(cin)));
  }
  void res_block(const std::string& p, int cin, int cout, bool norm_layers) {
    if (norm_layers) norm(p + ".n1", cin);
    conv(p + ".c1", 3, cin, cin);
    if (norm_layers) norm(p + ".n2", cin);
    conv(p + ".c2", 3, cin, cout);
    if (cin != cout) conv(p + ".sc", 1, cin, cout, false);
  }
  void mod_res_block(const std::string& p, int style_dim, int cin, int cout) {
    modulation(p + ".m1", style_dim, cin);
    conv(p + ".c1", 3, cin, cout);
    modulation(p + ".m2", style_dim, cout);
    conv(p + ".c2", 3, cout, cout);
    if (cin != cout) conv(p + ".sc", 1, cin, cout, false);
  }

 private:
  ParamStore& store_;
  Rng rng_;
};

}  // namespace

const Domain& domain(DomainId id) { return id == DomainId::A ? kDomainA : kDomainB; }

// ---- config ---------------------------------------------------------------------

int ModelConfig::width(int level) const {
  int w = base_channels;
  for (int i = 0; i < level; ++i) w = std::min(2 * w, max_channels);
  return w;
}

std::string ModelConfig::canonical() const {
  return "m21gan/1 base=" + std::to_string(base_channels) + " max=" + std::to_string(max_channels) +
         " style=" + std::to_string(style_dim) + " latent=" + std::to_string(latent_dim) +
         " hidden=" + std::to_string(mapping_hidden) + " slope=" + std::to_string(leaky_slope) +
         " gating=" + std::to_string(gating ? 1 : 0);
}

std::uint64_t ModelConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---- parameters -------------------------------------------------------------------

Tensor ParamStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter " + name);
  init.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), init});
  return init;
}

const Tensor& ParamStore::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamStore: no parameter named " + std::string(name));
  return entries_[it->second].value;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::vector<Tensor> ParamStore::with_prefix(std::string_view prefix) const {
  std::vector<Tensor> out;
  for (const auto& e : entries_)
    if (e.name.starts_with(prefix)) out.push_back(e.value);
  return out;
}

std::int64_t ParamStore::numel(std::string_view prefix) const {
  std::int64_t n = 0;
  for (const auto& e : entries_)
    if (e.name.starts_with(prefix)) n += e.value.numel();
  return n;
}

// ---- model --------------------------------------------------------------------------

Model::Model(ModelConfig config) : config_(config) {
  if (config_.base_channels < 1 || config_.max_channels < config_.base_channels || config_.style_dim < 1 ||
      config_.latent_dim < 1 || config_.mapping_hidden < 1) {
    throw ContractError("Model: invalid configuration " + config_.canonical());
  }
  const int c0 = config_.width(0), c1 = config_.width(1), c2 = config_.width(2);
  const int sd = config_.style_dim;
  Builder b(params_, config_.init_seed);

  b.mapper("C.A2S", kDomainA.channels, kSharedChannels);
  b.mapper("C.S2A", kSharedChannels, kDomainA.channels);
  b.mapper("C.B2S", kDomainB.channels, kSharedChannels);
  b.mapper("C.S2B", kSharedChannels, kDomainB.channels);

  b.conv("G.from", 3, kSharedChannels, c0);
  b.res_block("G.enc0", c0, c1, true);
  b.res_block("G.enc1", c1, c2, true);
  b.res_block("G.enc2", c2, c2, true);
  b.res_block("G.enc3", c2, c2, true);
  b.mod_res_block("G.dec0", sd, c2, c2);
  b.mod_res_block("G.dec1", sd, c2, c2);
  b.mod_res_block("G.dec2", sd, c2, c1);
  b.mod_res_block("G.dec3", sd, c1, c0);
  b.conv("G.to", 1, c0, kSharedChannels);

  b.conv("E.from", 3, kSharedChannels, c0);
  b.res_block("E.b0", c0, c1, false);
  b.res_block("E.b1", c1, c2, false);
  b.res_block("E.b2", c2, c2, false);
  b.conv("E.final", 4, c2, c2);
  b.dense("E.head_A", c2, sd);
  b.dense("E.head_B", c2, sd);

  const int hid = config_.mapping_hidden;
  b.dense("F.l0", config_.latent_dim, hid);
  for (int i = 1; i < 4; ++i) b.dense("F.l" + std::to_string(i), hid, hid);
  b.dense("F.head_A", hid, sd);
  b.dense("F.head_B", hid, sd);

  b.conv("D.stem_A", 1, kDomainA.channels, c0);
  b.conv("D.stem_B", 1, kDomainB.channels, c0);
  b.res_block("D.b0", c0, c1, false);
  b.res_block("D.b1", c1, c2, false);
  b.res_block("D.b2", c2, c2, false);
  b.conv("D.final", 4, c2, c2);
  b.dense("D.head_A", c2, 1);
  b.dense("D.head_B", c2, 1);
}

Tensor Model::act(const Tensor& x) const { return leaky_relu(x, config_.leaky_slope); }

void Model::check_image(const char* op, const Tensor& x, int channels) const {
  if (x.rank() != 4 || x.dim(1) != 32 || x.dim(2) != 32 || x.dim(3) != channels) {
    throw ShapeError(std::string(op) + ": expected [N,32,32," + std::to_string(channels) + "], got " +
                     shape_str(x.shape()));
  }
}

Tensor Model::channel_encode(const Tensor& x, DomainId d) const {
  if (x.rank() != 4 || x.dim(3) != domain(d).channels) {
    throw ShapeError(std::string("channel_encode: domain ") + tag(d) + " has " +
                     std::to_string(domain(d).channels) + " channels, input is " + shape_str(x.shape()));
  }
  return conv2d(x, P(d == DomainId::A ? "C.A2S" : "C.B2S"));
}

Tensor Model::channel_decode(const Tensor& h, DomainId d) const {
  if (h.rank() != 4 || h.dim(3) != kSharedChannels) {
    throw ShapeError("channel_decode: shared-space input must have 3 channels, got " + shape_str(h.shape()));
  }
  return conv2d(h, P(d == DomainId::A ? "C.S2A" : "C.S2B"));
}

Tensor Model::res_block(const Tensor& x, const std::string& p, int cin, int cout, bool down, bool norm) const {
  Tensor sc = x;
  if (cin != cout) sc = conv2d(sc, P(p + ".sc.w"));
  if (down) sc = avg_pool2(sc);
  Tensor r = x;
  if (norm) r = instance_norm(r, P(p + ".n1.g"), P(p + ".n1.b"));
  r = conv2d_bias(act(r), P(p + ".c1.w"), P(p + ".c1.b"), 1, 1);
  if (down) r = avg_pool2(r);
  if (norm) r = instance_norm(r, P(p + ".n2.g"), P(p + ".n2.b"));
  r = conv2d_bias(act(r), P(p + ".c2.w"), P(p + ".c2.b"), 1, 1);
  return mul_scalar(add(sc, r), kInvSqrt2);
}

Tensor Model::mod_res_block(const Tensor& x, const Tensor& s, const std::string& p, int cin, int cout,
                            bool up) const {
  Tensor sc = up ? upsample2(x) : x;
  if (cin != cout) sc = conv2d(sc, P(p + ".sc.w"));
  Tensor r = act(x);
  if (up) r = upsample2(r);
  const auto n = x.dim(0);
  r = demod_conv(r, P(p + ".c1.w"), dense(s, P(p + ".m1.w"), P(p + ".m1.b")));
  r = channel_shift(r, repeat_rows(P(p + ".c1.b"), n));
  r = demod_conv(act(r), P(p + ".c2.w"), dense(s, P(p + ".m2.w"), P(p + ".m2.b")));
  r = channel_shift(r, repeat_rows(P(p + ".c2.b"), n));
  return mul_scalar(add(sc, r), kInvSqrt2);
}

Tensor Model::generator_forward(const Tensor& h, const Tensor& s) const {
  check_image("generator_forward", h, kSharedChannels);
  if (s.rank() != 2 || s.dim(0) != h.dim(0) || s.dim(1) != config_.style_dim) {
    throw ShapeError("generator_forward: style " + shape_str(s.shape()) + " does not match batch " +
                     std::to_string(h.dim(0)) + " x style_dim " + std::to_string(config_.style_dim));
  }
  const int c0 = config_.width(0), c1 = config_.width(1), c2 = config_.width(2);
  Tensor x = conv2d_bias(h, P("G.from.w"), P("G.from.b"), 1, 1);
  x = res_block(x, "G.enc0", c0, c1, true, true);
  x = res_block(x, "G.enc1", c1, c2, true, true);
  x = res_block(x, "G.enc2", c2, c2, false, true);
  x = res_block(x, "G.enc3", c2, c2, false, true);
  x = mod_res_block(x, s, "G.dec0", c2, c2, false);
  x = mod_res_block(x, s, "G.dec1", c2, c2, false);
  x = mod_res_block(x, s, "G.dec2", c2, c1, true);
  x = mod_res_block(x, s, "G.dec3", c1, c0, true);
  return conv2d_bias(act(x), P("G.to.w"), P("G.to.b"));
}

Tensor Model::conv_trunk(const Tensor& h, const std::string& p) const {
  const int c0 = config_.width(0), c1 = config_.width(1), c2 = config_.width(2);
  Tensor x = res_block(h, p + ".b0", c0, c1, true, false);
  x = res_block(x, p + ".b1", c1, c2, true, false);
  x = res_block(x, p + ".b2", c2, c2, true, false);
  x = conv2d_bias(act(x), P(p + ".final.w"), P(p + ".final.b"));  // 4x4 valid -> 1x1
  return reshape(act(x), {h.dim(0), c2});
}

Tensor Model::style_encode(const Tensor& x, DomainId d) const {
  check_image("style_encode", x, domain(d).channels);
  Tensor h = conv2d_bias(channel_encode(x, d), P("E.from.w"), P("E.from.b"), 1, 1);
  const std::string head = std::string("E.head_") + tag(d);
  return dense(conv_trunk(h, "E"), P(head + ".w"), P(head + ".b"));
}

Tensor Model::map_latent(const Tensor& z, DomainId d) const {
  if (z.rank() != 2 || z.dim(1) != config_.latent_dim) {
    throw ShapeError("map_latent: expected [N," + std::to_string(config_.latent_dim) + "], got " +
                     shape_str(z.shape()));
  }
  Tensor h = z;
  for (int i = 0; i < 4; ++i) {
    const std::string l = "F.l" + std::to_string(i);
    h = act(dense(h, P(l + ".w"), P(l + ".b")));
  }
  const std::string head = std::string("F.head_") + tag(d);
  return dense(h, P(head + ".w"), P(head + ".b"));
}

Tensor Model::discriminate(const Tensor& x, DomainId d) const {
  check_image("discriminate", x, domain(d).channels);
  const std::string stem = std::string("D.stem_") + tag(d);
  Tensor h = conv2d_bias(x, P(stem + ".w"), P(stem + ".b"));
  const std::string head = std::string("D.head_") + tag(d);
  return reshape(dense(conv_trunk(h, "D"), P(head + ".w"), P(head + ".b")), {x.dim(0)});
}

Style Model::resolve_style(const StyleSource& source, DomainId target, std::int64_t batch) const {
  if (std::holds_alternative<ZeroStyle>(source)) {
    return Style(Tensor(Shape{batch, config_.style_dim}, 0.0f), true);
  }
  if (config_.gating && !is_multi(target)) {
    throw ContractError(std::string("translate: domain ") + tag(target) +
                        " is uni-modal; only ZeroStyle may target it");
  }
  Tensor s = std::holds_alternative<LatentStyle>(source) ? map_latent(std::get<LatentStyle>(source).z, target)
                                                          : style_encode(std::get<GuideStyle>(source).image, target);
  if (s.dim(0) != batch) {
    throw ShapeError("resolve_style: style batch " + std::to_string(s.dim(0)) + " != " + std::to_string(batch));
  }
  return Style(s, false);
}

Tensor Model::generate(const Tensor& x, DomainId source, DomainId target, const Style& style) const {
  check_image("translate", x, domain(source).channels);
  if (config_.gating && !is_multi(target) && !style.is_zero()) {
    throw ContractError(std::string("translate: domain ") + tag(target) + " is uni-modal; only ZeroStyle may target it");
  }
  return tanh(channel_decode(generator_forward(channel_encode(x, source), style.vector()), target));
}

Tensor Model::translate(const Tensor& x, DomainId source, DomainId target, const StyleSource& style) const {
  return generate(x, source, target, resolve_style(style, target, x.dim(0)));
}

std::vector<Tensor> Model::demod_dense_weights() const {
  std::vector<Tensor> out;
  for (const auto& e : params_.entries())
    if (e.name.starts_with("G.dec") && (e.name.ends_with(".m1.w") || e.name.ends_with(".m2.w"))) out.push_back(e.value);
  return out;
}

}  // namespace m21::gan
