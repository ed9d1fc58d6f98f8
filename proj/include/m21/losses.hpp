// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "m21/model.hpp"
#include "m21/tape.hpp"

namespace m21::losses {

/// BASELINE: symmetric objective, diversity on every target, no gating.
/// HMU: channel cycle loss, zero-style gating, diversity on multi-modal targets only.
/// HMS: HMU plus the paired supervised term.
enum class Mode { Baseline, HMU, HMS };
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);
inline bool asymmetric(Mode m) { return m != Mode::Baseline; }

struct Lambdas {
  double adv = 1, r1 = 1, style_recon = 1, cycle = 1, ch_cyc = 1, ds = 1, sup = 1;
};

struct LossReport {
  double adv_d = 0, adv_g = 0, r1 = 0, style_recon = 0, cycle = 0, ch_cyc = 0, ds = 0;
  std::optional<double> sup;  // HMS only

  static constexpr const char* kCsvHeader = "step,adv_d,adv_g,r1,style_recon,cycle,ch_cyc,ds,sup";
  /// Absent terms are written as empty fields.
  std::string csv_row(std::uint64_t step) const;
  bool all_finite() const;
};

/// One training batch. x_a are color sources translated to B, x_b gray
/// sources translated to A; either may be undefined. x_a_pair holds the
/// ground-truth grayscale images of x_a (HMS). Latent pairs drive the two
/// styles each content image is rendered with.
struct Batch {
  Tensor x_a, x_b, x_a_pair;
  Tensor z_to_a1, z_to_a2;  // [Nb, latent]
  Tensor z_to_b1, z_to_b2;  // [Na, latent], used only without gating
  std::int64_t count_a() const { return x_a.defined() ? x_a.dim(0) : 0; }
  std::int64_t count_b() const { return x_b.defined() ? x_b.dim(0) : 0; }
};

// ---- individual terms -------------------------------------------------------------

/// L1(S->A(A->S(x_a)), x_a) + L1(S->B(B->S(x_b)), x_b); an undefined input drops its half.
Tensor channel_cycle_loss(const gan::Model& model, const Tensor& x_a, const Tensor& x_b);

/// -L1(G(x, s1), G(x, s2)). Zero styles are rejected, as are uni-modal
/// targets when the model gates them.
Tensor diversity_loss(const gan::Model& model, const Tensor& x, gan::DomainId source, gan::DomainId target,
                      const gan::Style& s1, const gan::Style& s2);

/// L1(translate(x_a, A->B, ZeroStyle), x_b) on a paired batch.
Tensor supervised_loss(const gan::Model& model, const Tensor& x_a, const Tensor& x_b);

/// mean softplus(-real) + mean softplus(fake).
Tensor discriminator_logistic(const Tensor& real_logits, const Tensor& fake_logits);
/// mean softplus(-fake).
Tensor generator_logistic(const Tensor& fake_logits);
/// 0.5 * mean_n |d sum(logits) / d x_real[n]|^2; x_real must be tracked on `tape`
/// and the result stays differentiable.
Tensor r1_penalty(Tape& tape, const Tensor& x_real, const Tensor& real_logits);

struct Adversarial {
  Tensor d_loss, g_loss, r1;
};
/// Non-saturating logistic losses and the R1 penalty (gamma = 1) for one domain.
/// The discriminator loss sees `fake` detached.
Adversarial adversarial_losses(const gan::Model& model, Tape& tape, const Tensor& real, const Tensor& fake,
                               gan::DomainId d);

/// L1(E(fake, target), s). Zero (skipped) for gated uni-modal targets.
Tensor style_reconstruction_loss(const gan::Model& model, const Tensor& fake, const gan::Style& s,
                                 gan::DomainId target);

/// L1(G(fake, s_src), x) with s_src = E(x, source), or ZeroStyle for a gated
/// uni-modal source. Zero (skipped) when the forward target is a gated
/// uni-modal domain: the return trip would need a style.
Tensor cycle_consistency_loss(const gan::Model& model, const Tensor& x, const Tensor& fake, gan::DomainId source,
                              gan::DomainId target);

// ---- objectives -------------------------------------------------------------------

/// Generator-side terms except the adversarial one, plus the fakes they were
/// computed on (still attached to the tape).
struct GeneratorPass {
  Tensor fake_a, fake_b;  // translations of x_b and x_a
  Tensor total;           // weighted sum of style_recon, cycle, ch_cyc, ds, sup
  LossReport report;
};
GeneratorPass generator_pass(const gan::Model& model, const Batch& batch, Mode mode, const Lambdas& lambdas);

/// Adversarial generator term on the pass's fakes (sample-weighted over both directions).
Tensor generator_adversarial(const gan::Model& model, const GeneratorPass& pass);

/// Discriminator objective lambda_adv * adv_d + lambda_r1 * r1 on the batch's
/// real images and detached fakes. Fills report.adv_d and report.r1.
Tensor discriminator_objective(const gan::Model& model, Tape& tape, const Batch& batch, const GeneratorPass& pass,
                               const Lambdas& lambdas, LossReport& report);

struct Objective {
  Tensor generator_total, discriminator_total;
  LossReport report;
};
/// All terms at the current parameters, with every lambda applied.
Objective total_objective(const gan::Model& model, Tape& tape, const Batch& batch, Mode mode,
                          const Lambdas& lambdas = {});

/// Throws ContractError when the model's gating does not match the mode or an
/// HMS batch is not paired.
void check_mode(const gan::Model& model, const Batch& batch, Mode mode);

}  // namespace m21::losses
