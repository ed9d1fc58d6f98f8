// SPDX-License-Identifier: Apache-2.0
#include "m21/losses.hpp"

#include <cmath>
#include <cstdio>

#include "m21/ops.hpp"

namespace m21::losses {

using gan::DomainId;
using gan::GuideStyle;
using gan::LatentStyle;
using gan::Model;
using gan::Style;
using gan::ZeroStyle;

namespace {

Tensor zero_scalar() { return Tensor(Shape{}, 0.0f); }

bool has(const Tensor& t) { return t.defined() && t.dim(0) > 0; }

bool gated_uni(const Model& model, DomainId d) { return model.config().gating && !gan::is_multi(d); }

/// Sample-weighted mean of per-group means: sum(n_i * t_i) / sum(n_i).
Tensor weighted(const std::vector<std::pair<Tensor, std::int64_t>>& parts) {
  Tensor acc;
  std::int64_t total = 0;
  for (const auto& [t, n] : parts) {
    if (n == 0) continue;
    Tensor term = mul_scalar(t, static_cast<float>(n));
    acc = acc.defined() ? add(acc, term) : term;
    total += n;
  }
  return total == 0 ? zero_scalar() : mul_scalar(acc, 1.0f / static_cast<float>(total));
}

double value(const Tensor& t) { return static_cast<double>(t.item()); }

Tensor scaled(const Tensor& t, double lambda) { return mul_scalar(t, static_cast<float>(lambda)); }

void check_diversity(const Model& model, DomainId target, const Style& s1, const Style& s2) {
  if (s1.is_zero() || s2.is_zero()) throw ContractError("diversity_loss: styles must be non-zero");
  if (gated_uni(model, target)) {
    throw ContractError(std::string("diversity_loss: target domain ") + gan::domain(target).name +
                        " is uni-modal; diversity applies to multi-modal targets only");
  }
}

std::string field(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Baseline: return "BASELINE";
    case Mode::HMU: return "HMU";
    case Mode::HMS: return "HMS";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "BASELINE" || s == "baseline") return Mode::Baseline;
  if (s == "HMU" || s == "hmu") return Mode::HMU;
  if (s == "HMS" || s == "hms") return Mode::HMS;
  throw ContractError("unknown mode '" + s + "' (expected BASELINE, HMU or HMS)");
}

std::string LossReport::csv_row(std::uint64_t step) const {
  return std::to_string(step) + "," + field(adv_d) + "," + field(adv_g) + "," + field(r1) + "," +
         field(style_recon) + "," + field(cycle) + "," + field(ch_cyc) + "," + field(ds) + "," +
         (sup ? field(*sup) : std::string());
}

bool LossReport::all_finite() const {
  for (double v : {adv_d, adv_g, r1, style_recon, cycle, ch_cyc, ds})
    if (!std::isfinite(v)) return false;
  return !sup || std::isfinite(*sup);
}

// ---- terms --------------------------------------------------------------------------

Tensor channel_cycle_loss(const Model& model, const Tensor& x_a, const Tensor& x_b) {
  Tensor total = zero_scalar();
  if (has(x_a)) {
    total = add(total, l1_loss(model.channel_decode(model.channel_encode(x_a, DomainId::A), DomainId::A), x_a));
  }
  if (has(x_b)) {
    total = add(total, l1_loss(model.channel_decode(model.channel_encode(x_b, DomainId::B), DomainId::B), x_b));
  }
  return total;
}

Tensor diversity_loss(const Model& model, const Tensor& x, DomainId source, DomainId target, const Style& s1,
                      const Style& s2) {
  check_diversity(model, target, s1, s2);
  return neg(l1_loss(model.generate(x, source, target, s1), model.generate(x, source, target, s2)));
}

Tensor supervised_loss(const Model& model, const Tensor& x_a, const Tensor& x_b) {
  if (!has(x_a) || !has(x_b) || x_a.dim(0) != x_b.dim(0)) {
    throw ContractError("supervised_loss: needs a paired batch (color images with their grayscale counterparts)");
  }
  return l1_loss(model.translate(x_a, DomainId::A, DomainId::B, ZeroStyle{}), x_b);
}

Tensor discriminator_logistic(const Tensor& real_logits, const Tensor& fake_logits) {
  return add(mean(softplus(neg(real_logits))), mean(softplus(fake_logits)));
}

Tensor generator_logistic(const Tensor& fake_logits) { return mean(softplus(neg(fake_logits))); }

Tensor r1_penalty(Tape& tape, const Tensor& x_real, const Tensor& real_logits) {
  const Tensor g = tape.grad(sum(real_logits), {x_real}, true)[0];
  return mul_scalar(sum(square(g)), 0.5f / static_cast<float>(x_real.dim(0)));
}

Adversarial adversarial_losses(const Model& model, Tape& tape, const Tensor& real, const Tensor& fake, DomainId d) {
  Tensor x = real.detach();
  x.set_requires_grad(true);
  const Tensor real_logits = model.discriminate(x, d);
  Adversarial out;
  out.d_loss = discriminator_logistic(real_logits, model.discriminate(fake.detach(), d));
  out.g_loss = generator_logistic(model.discriminate(fake, d));
  out.r1 = r1_penalty(tape, x, real_logits);
  return out;
}

Tensor style_reconstruction_loss(const Model& model, const Tensor& fake, const Style& s, DomainId target) {
  if (gated_uni(model, target)) return zero_scalar();
  return l1_loss(model.style_encode(fake, target), s.vector());
}

Tensor cycle_consistency_loss(const Model& model, const Tensor& x, const Tensor& fake, DomainId source,
                              DomainId target) {
  if (gated_uni(model, target)) return zero_scalar();
  const auto n = x.dim(0);
  const Style s = gated_uni(model, source) ? model.resolve_style(ZeroStyle{}, source, n)
                                           : model.resolve_style(GuideStyle{x}, source, n);
  return l1_loss(model.generate(fake, target, source, s), x);
}

// ---- objectives ------------------------------------------------------------------------

void check_mode(const Model& model, const Batch& batch, Mode mode) {
  if (model.config().gating != asymmetric(mode)) {
    throw ContractError(std::string("mode ") + mode_name(mode) + " needs a model with gating " +
                        (asymmetric(mode) ? "on" : "off"));
  }
  if (mode == Mode::HMS && has(batch.x_a) &&
      (!has(batch.x_a_pair) || batch.x_a_pair.dim(0) != batch.x_a.dim(0))) {
    throw ContractError("HMS needs a paired batch: x_a_pair must hold the grayscale images of x_a");
  }
  if (!has(batch.x_a) && !has(batch.x_b)) throw ContractError("empty batch");
}

GeneratorPass generator_pass(const Model& model, const Batch& batch, Mode mode, const Lambdas& lambdas) {
  check_mode(model, batch, mode);
  const bool asym = asymmetric(mode);
  const auto na = batch.count_a(), nb = batch.count_b();
  GeneratorPass pass;
  std::vector<std::pair<Tensor, std::int64_t>> sty, cyc, ds;
  Tensor sup;

  if (na > 0) {  // color -> gray
    const Style s1 = asym ? model.resolve_style(ZeroStyle{}, DomainId::B, na)
                          : model.resolve_style(LatentStyle{batch.z_to_b1}, DomainId::B, na);
    pass.fake_b = model.generate(batch.x_a, DomainId::A, DomainId::B, s1);
    if (!gated_uni(model, DomainId::B)) {
      sty.emplace_back(style_reconstruction_loss(model, pass.fake_b, s1, DomainId::B), na);
      const Style s2 = model.resolve_style(LatentStyle{batch.z_to_b2}, DomainId::B, na);
      check_diversity(model, DomainId::B, s1, s2);
      ds.emplace_back(neg(l1_loss(pass.fake_b, model.generate(batch.x_a, DomainId::A, DomainId::B, s2))), na);
    }
    if (!gated_uni(model, DomainId::B)) {
      cyc.emplace_back(cycle_consistency_loss(model, batch.x_a, pass.fake_b, DomainId::A, DomainId::B), na);
    }
    if (mode == Mode::HMS) sup = l1_loss(pass.fake_b, batch.x_a_pair);
  }
  if (nb > 0) {  // gray -> color
    const Style s1 = model.resolve_style(LatentStyle{batch.z_to_a1}, DomainId::A, nb);
    const Style s2 = model.resolve_style(LatentStyle{batch.z_to_a2}, DomainId::A, nb);
    pass.fake_a = model.generate(batch.x_b, DomainId::B, DomainId::A, s1);
    sty.emplace_back(style_reconstruction_loss(model, pass.fake_a, s1, DomainId::A), nb);
    check_diversity(model, DomainId::A, s1, s2);
    ds.emplace_back(neg(l1_loss(pass.fake_a, model.generate(batch.x_b, DomainId::B, DomainId::A, s2))), nb);
    cyc.emplace_back(cycle_consistency_loss(model, batch.x_b, pass.fake_a, DomainId::B, DomainId::A), nb);
  }

  const Tensor t_sty = weighted(sty), t_cyc = weighted(cyc), t_ds = weighted(ds);
  const Tensor t_ch = asym ? channel_cycle_loss(model, batch.x_a, batch.x_b) : zero_scalar();
  Tensor total = add(add(scaled(t_sty, lambdas.style_recon), scaled(t_cyc, lambdas.cycle)),
                     add(scaled(t_ch, lambdas.ch_cyc), scaled(t_ds, lambdas.ds)));
  pass.report.style_recon = value(t_sty);
  pass.report.cycle = value(t_cyc);
  pass.report.ch_cyc = value(t_ch);
  pass.report.ds = value(t_ds);
  if (mode == Mode::HMS) {
    if (!sup.defined()) sup = zero_scalar();
    total = add(total, scaled(sup, lambdas.sup));
    pass.report.sup = value(sup);
  }
  pass.total = total;
  return pass;
}

Tensor generator_adversarial(const Model& model, const GeneratorPass& pass) {
  std::vector<std::pair<Tensor, std::int64_t>> parts;
  if (has(pass.fake_b)) parts.emplace_back(generator_logistic(model.discriminate(pass.fake_b, DomainId::B)),
                                           pass.fake_b.dim(0));
  if (has(pass.fake_a)) parts.emplace_back(generator_logistic(model.discriminate(pass.fake_a, DomainId::A)),
                                           pass.fake_a.dim(0));
  return weighted(parts);
}

Tensor discriminator_objective(const Model& model, Tape& tape, const Batch& batch, const GeneratorPass& pass,
                               const Lambdas& lambdas, LossReport& report) {
  std::vector<std::pair<Tensor, std::int64_t>> real_terms, fake_terms, r1_terms;
  auto real = [&](const Tensor& images, DomainId d) {
    if (!has(images)) return;
    Tensor x = images.detach();
    x.set_requires_grad(true);
    const Tensor logits = model.discriminate(x, d);
    real_terms.emplace_back(mean(softplus(neg(logits))), x.dim(0));
    r1_terms.emplace_back(r1_penalty(tape, x, logits), x.dim(0));
  };
  auto fake = [&](const Tensor& images, DomainId d) {
    if (!has(images)) return;
    fake_terms.emplace_back(mean(softplus(model.discriminate(images.detach(), d))), images.dim(0));
  };
  real(batch.x_a, DomainId::A);
  real(batch.x_b, DomainId::B);
  fake(pass.fake_a, DomainId::A);
  fake(pass.fake_b, DomainId::B);
  const Tensor adv = add(weighted(real_terms), weighted(fake_terms));
  const Tensor r1 = weighted(r1_terms);
  report.adv_d = value(adv);
  report.r1 = value(r1);
  return add(scaled(adv, lambdas.adv), scaled(r1, lambdas.r1));
}

Objective total_objective(const Model& model, Tape& tape, const Batch& batch, Mode mode, const Lambdas& lambdas) {
  GeneratorPass pass = generator_pass(model, batch, mode, lambdas);
  Objective out;
  out.report = pass.report;
  out.discriminator_total = discriminator_objective(model, tape, batch, pass, lambdas, out.report);
  const Tensor adv_g = generator_adversarial(model, pass);
  out.report.adv_g = value(adv_g);
  out.generator_total = add(pass.total, scaled(adv_g, lambdas.adv));
  return out;
}

}  // namespace m21::losses
