// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "m21/losses.hpp"
#include "m21/ops.hpp"
#include "m21/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/loss_cases.hpp"

using namespace m21;
using namespace m21::gan;
using namespace m21::losses;
using m21::testing::gradcheck;

namespace {

ModelConfig tiny(bool gating, float slope = 0.2f) {
  ModelConfig c;
  c.base_channels = 4;
  c.max_channels = 8;
  c.style_dim = 4;
  c.latent_dim = 4;
  c.mapping_hidden = 8;
  c.gating = gating;
  c.leaky_slope = slope;
  c.init_seed = 3;
  return c;
}

Tensor uniform(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (auto& v : t.mutable_data()) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return t;
}

Tensor normal(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.normal());
  return t;
}

Batch make_batch(std::int64_t na, std::int64_t nb, std::uint64_t seed, bool paired) {
  Batch b;
  if (na > 0) {
    b.x_a = uniform({na, 32, 32, 3}, seed + 1);
    b.z_to_b1 = normal({na, 4}, seed + 2);
    b.z_to_b2 = normal({na, 4}, seed + 3);
    if (paired) b.x_a_pair = uniform({na, 32, 32, 1}, seed + 4);
  }
  if (nb > 0) {
    b.x_b = uniform({nb, 32, 32, 1}, seed + 5);
    b.z_to_a1 = normal({nb, 4}, seed + 6);
    b.z_to_a2 = normal({nb, 4}, seed + 7);
  }
  return b;
}

Tensor permute(const Tensor& t, const std::vector<std::int64_t>& order) {
  if (!t.defined()) return t;
  std::vector<Tensor> rows;
  for (auto i : order) rows.push_back(slice_batch(t, i, i + 1));
  return concat_batch(rows);
}

double loop_l1(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) s += std::fabs(double(a.data()[i]) - double(b.data()[i]));
  return s / static_cast<double>(a.numel());
}

void fill(Tensor t, std::initializer_list<float> values) {
  auto d = t.mutable_data();
  REQUIRE(d.size() == values.size());
  std::copy(values.begin(), values.end(), d.begin());
}

}  // namespace

TEST_CASE("mode names and contract") {
  CHECK(parse_mode("HMU") == Mode::HMU);
  CHECK(parse_mode("hms") == Mode::HMS);
  CHECK(std::string(mode_name(Mode::Baseline)) == "BASELINE");
  CHECK_THROWS_AS(parse_mode("UNIT"), ContractError);

  const Model gated(tiny(true)), plain(tiny(false));
  const Batch paired = make_batch(2, 2, 10, true), unpaired = make_batch(2, 2, 10, false);
  CHECK_NOTHROW(check_mode(gated, paired, Mode::HMS));
  CHECK_NOTHROW(check_mode(gated, unpaired, Mode::HMU));
  CHECK_NOTHROW(check_mode(plain, unpaired, Mode::Baseline));
  CHECK_THROWS_AS(check_mode(gated, unpaired, Mode::HMS), ContractError);
  CHECK_THROWS_AS(check_mode(gated, unpaired, Mode::Baseline), ContractError);
  CHECK_THROWS_AS(check_mode(plain, unpaired, Mode::HMU), ContractError);
}

TEST_CASE("channel cycle loss") {
  Model model(tiny(true));
  const Tensor x_a = uniform({3, 32, 32, 3}, 1), x_b = uniform({3, 32, 32, 1}, 2);
  NoGradGuard no_grad;

  SUBCASE("mutually inverse mappers give zero") {
    fill(model.params().at("C.A2S"), {1, 0, 0, 0, 1, 0, 0, 0, 1});
    fill(model.params().at("C.S2A"), {1, 0, 0, 0, 1, 0, 0, 0, 1});
    fill(model.params().at("C.B2S"), {1, 1, 1});
    fill(model.params().at("C.S2B"), {0.5f, 0.25f, 0.25f});
    CHECK(channel_cycle_loss(model, x_a, x_b).item() == doctest::Approx(0.0).epsilon(1e-7));
  }
  SUBCASE("A half matches a loop oracle") {
    const auto enc = model.params().at("C.A2S").data(), dec = model.params().at("C.S2A").data();
    double s = 0;
    const auto px = x_a.data();
    for (std::size_t p = 0; p < px.size(); p += 3) {
      double h[3] = {0, 0, 0};
      for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 3; ++i) h[o] += double(px[p + i]) * enc[i * 3 + o];
      for (int o = 0; o < 3; ++o) {
        double r = 0;
        for (int i = 0; i < 3; ++i) r += h[i] * dec[i * 3 + o];
        s += std::fabs(r - px[p + o]);
      }
    }
    const double expect = s / static_cast<double>(px.size());
    CHECK(channel_cycle_loss(model, x_a, Tensor()).item() == doctest::Approx(expect).epsilon(1e-5));
  }
  SUBCASE("sum of halves, permutation invariant") {
    const double both = channel_cycle_loss(model, x_a, x_b).item();
    const double halves = channel_cycle_loss(model, x_a, Tensor()).item() + channel_cycle_loss(model, Tensor(), x_b).item();
    CHECK(both == doctest::Approx(halves).epsilon(1e-6));
    const double permuted = channel_cycle_loss(model, permute(x_a, {2, 0, 1}), permute(x_b, {1, 2, 0})).item();
    CHECK(permuted == doctest::Approx(both).epsilon(1e-6));
    CHECK(both >= 0.0);
  }
}

TEST_CASE("diversity loss") {
  const Model gated(tiny(true)), plain(tiny(false));
  const Tensor x_b = uniform({2, 32, 32, 1}, 5), x_a = uniform({2, 32, 32, 3}, 6);
  NoGradGuard no_grad;
  const Style s1 = gated.resolve_style(LatentStyle{normal({2, 4}, 7)}, DomainId::A, 2);
  const Style s2 = gated.resolve_style(LatentStyle{normal({2, 4}, 8)}, DomainId::A, 2);

  CHECK(diversity_loss(gated, x_b, DomainId::B, DomainId::A, s1, s1).item() == 0.0f);
  const double oracle = -loop_l1(gated.generate(x_b, DomainId::B, DomainId::A, s1),
                                 gated.generate(x_b, DomainId::B, DomainId::A, s2));
  const double got = diversity_loss(gated, x_b, DomainId::B, DomainId::A, s1, s2).item();
  CHECK(got == doctest::Approx(oracle).epsilon(1e-5));
  CHECK(got < 0.0);

  const Style zero = gated.resolve_style(ZeroStyle{}, DomainId::A, 2);
  CHECK_THROWS_AS(diversity_loss(gated, x_b, DomainId::B, DomainId::A, zero, s2), ContractError);
  const Style zero_b = gated.resolve_style(ZeroStyle{}, DomainId::B, 2);
  CHECK_THROWS_AS(diversity_loss(gated, x_a, DomainId::A, DomainId::B, zero_b, zero_b), ContractError);

  // without gating a gray target takes latent styles and is a valid diversity target
  const Style p1 = plain.resolve_style(LatentStyle{normal({2, 4}, 9)}, DomainId::B, 2);
  const Style p2 = plain.resolve_style(LatentStyle{normal({2, 4}, 10)}, DomainId::B, 2);
  CHECK(diversity_loss(plain, x_a, DomainId::A, DomainId::B, p1, p2).item() < 0.0f);
}

TEST_CASE("supervised loss") {
  const Model model(tiny(true));
  const Tensor x_a = uniform({3, 32, 32, 3}, 11);
  NoGradGuard no_grad;
  const Tensor generated = model.translate(x_a, DomainId::A, DomainId::B, ZeroStyle{});
  CHECK(supervised_loss(model, x_a, generated).item() == 0.0f);
  CHECK(supervised_loss(model, x_a, add_scalar(generated, 0.2f)).item() == doctest::Approx(0.2).epsilon(1e-5));
  const Tensor target = uniform({3, 32, 32, 1}, 12);
  CHECK(supervised_loss(model, x_a, target).item() == doctest::Approx(loop_l1(generated, target)).epsilon(1e-5));
  CHECK_THROWS_AS(supervised_loss(model, x_a, Tensor()), ContractError);
  CHECK_THROWS_AS(supervised_loss(model, x_a, uniform({2, 32, 32, 1}, 13)), ContractError);
}

TEST_CASE("adversarial terms") {
  const Tensor zeros({5}, 0.0f);
  CHECK(generator_logistic(zeros).item() == doctest::Approx(std::log(2.0)));
  CHECK(discriminator_logistic(zeros, zeros).item() == doctest::Approx(2 * std::log(2.0)));
  double prev = 1e9;
  for (float r : {-2.0f, -0.5f, 0.0f, 1.0f, 3.0f}) {
    const double d = discriminator_logistic(Tensor({5}, r), zeros).item();
    CHECK(d < prev);
    prev = d;
  }

  SUBCASE("R1 equals half the mean squared input gradient") {
    // smooth critic: logits[n] = sum tanh(conv(x[n], k))
    const Tensor k = uniform({3, 3, 2, 1}, 21, -0.5, 0.5);
    auto critic = [&](const Tensor& x) { return reshape(spatial_sum(tanh(conv2d(x, k, 1, 1))), {x.dim(0)}); };
    Tensor x = uniform({2, 4, 4, 2}, 22);
    x.set_requires_grad(true);
    double r1 = 0;
    {
      Tape tape;
      r1 = r1_penalty(tape, x, critic(x)).item();
    }
    // finite-difference input gradient of sum(logits)
    auto total = [&] {
      NoGradGuard g;
      return static_cast<double>(sum(critic(x)).item());
    };
    double sq = 0;
    auto vals = x.mutable_data();
    const float h = 1e-2f;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const float saved = vals[i];
      vals[i] = saved + h;
      const double up = total();
      vals[i] = saved - h;
      const double down = total();
      vals[i] = saved;
      const double gi = (up - down) / (2.0 * h);
      sq += gi * gi;
    }
    CHECK(r1 == doctest::Approx(0.5 * sq / 2.0).epsilon(1e-3));
  }
  SUBCASE("R1 is differentiable") {
    const auto result = gradcheck(
        [](Tape& tape, const std::vector<Tensor>& in) {
          const Tensor logits = reshape(spatial_sum(tanh(conv2d(in[0], in[1], 1, 1))), {in[0].dim(0)});
          return r1_penalty(tape, in[0], logits);
        },
        {uniform({2, 4, 4, 2}, 23), uniform({3, 3, 2, 1}, 24, -0.5, 0.5)});
    CHECK(result.max_rel_error < 1e-3);
  }
  SUBCASE("per-domain bundle") {
    const Model model(tiny(true));
    const Tensor real = uniform({2, 32, 32, 3}, 25), fake = uniform({2, 32, 32, 3}, 26);
    Tape tape;
    const Adversarial adv = adversarial_losses(model, tape, real, fake, DomainId::A);
    Tensor rl, fl;
    {
      NoGradGuard g;
      rl = model.discriminate(real, DomainId::A);
      fl = model.discriminate(fake, DomainId::A);
    }
    CHECK(adv.d_loss.item() == doctest::Approx(discriminator_logistic(rl, fl).item()).epsilon(1e-5));
    CHECK(adv.g_loss.item() == doctest::Approx(generator_logistic(fl).item()).epsilon(1e-5));
    CHECK(adv.r1.item() >= 0.0f);
  }
}

TEST_CASE("style reconstruction and cycle terms") {
  const Model model(tiny(true));
  const Tensor x_b = uniform({2, 32, 32, 1}, 31), x_a = uniform({2, 32, 32, 3}, 32);
  NoGradGuard no_grad;
  const Style sa = model.resolve_style(LatentStyle{normal({2, 4}, 33)}, DomainId::A, 2);
  const Tensor fake_a = model.generate(x_b, DomainId::B, DomainId::A, sa);
  CHECK(style_reconstruction_loss(model, fake_a, sa, DomainId::A).item() ==
        doctest::Approx(loop_l1(model.style_encode(fake_a, DomainId::A), sa.vector())).epsilon(1e-5));

  const Style sb = model.resolve_style(ZeroStyle{}, DomainId::B, 2);
  const Tensor fake_b = model.generate(x_a, DomainId::A, DomainId::B, sb);
  CHECK(style_reconstruction_loss(model, fake_b, sb, DomainId::B).item() == 0.0f);

  // gray -> color -> gray: the gray source has no style, so the return trip uses zero
  const Tensor back_b = model.generate(fake_a, DomainId::A, DomainId::B, sb);
  CHECK(cycle_consistency_loss(model, x_b, fake_a, DomainId::B, DomainId::A).item() ==
        doctest::Approx(loop_l1(back_b, x_b)).epsilon(1e-5));
  // color -> gray -> color is skipped under gating
  CHECK(cycle_consistency_loss(model, x_a, fake_b, DomainId::A, DomainId::B).item() == 0.0f);
  // without gating the return trip uses the source's encoded style
  const Model plain(tiny(false));
  const Style pb = plain.resolve_style(LatentStyle{normal({2, 4}, 34)}, DomainId::B, 2);
  const Tensor plain_b = plain.generate(x_a, DomainId::A, DomainId::B, pb);
  const Style own = plain.resolve_style(GuideStyle{x_a}, DomainId::A, 2);
  const Tensor back_a = plain.generate(plain_b, DomainId::B, DomainId::A, own);
  CHECK(cycle_consistency_loss(plain, x_a, plain_b, DomainId::A, DomainId::B).item() ==
        doctest::Approx(loop_l1(back_a, x_a)).epsilon(1e-5));
}

TEST_CASE("uni-modal-only batch leaves the style path without gradient") {
  Model model(tiny(true));
  const Batch uni = make_batch(3, 0, 41, true);
  for (Mode mode : {Mode::HMU, Mode::HMS}) {
    for (const auto& e : model.params().entries()) Tensor(e.value).zero_grad();
    {
      Tape tape;
      const Objective o = total_objective(model, tape, uni, mode);
      tape.backward(o.generator_total);
    }
    auto untouched = [](const std::vector<Tensor>& ts) {
      for (const auto& t : ts) {
        if (!t.grad().defined()) continue;
        for (float g : t.grad().data())
          if (g != 0.0f) return false;
      }
      return true;
    };
    CHECK(untouched(model.params().with_prefix("E.")));
    CHECK(untouched(model.params().with_prefix("F.")));
    CHECK(untouched(model.demod_dense_weights()));
    CHECK_FALSE(untouched(model.params().with_prefix("G.")));
  }
}

TEST_CASE("total objective by mode") {
  const Model gated(tiny(true)), plain(tiny(false));
  const Batch batch = make_batch(2, 2, 50, true);

  auto objective = [](const Model& m, const Batch& b, Mode mode, const Lambdas& l = {}) {
    Tape tape;
    return total_objective(m, tape, b, mode, l);
  };

  const Objective hmu = objective(gated, batch, Mode::HMU);
  const Objective hms = objective(gated, batch, Mode::HMS);
  const Objective base = objective(plain, batch, Mode::Baseline);
  CHECK_FALSE(hmu.report.sup.has_value());
  REQUIRE(hms.report.sup.has_value());
  CHECK(*hms.report.sup >= 0.0);
  CHECK(base.report.ch_cyc == 0.0);
  CHECK(hmu.report.ch_cyc > 0.0);
  for (const auto* o : {&hmu, &hms, &base}) {
    CHECK(o->report.all_finite());
    CHECK(o->report.ds <= 0.0);
    CHECK(o->report.r1 >= 0.0);
  }
  CHECK_THROWS_AS(objective(gated, make_batch(2, 2, 50, false), Mode::HMS), ContractError);

  SUBCASE("diversity on uni-modal targets") {
    const Batch uni_only = make_batch(3, 0, 60, false);
    CHECK(objective(gated, uni_only, Mode::HMU).report.ds == 0.0);
    CHECK(objective(plain, uni_only, Mode::Baseline).report.ds < 0.0);
  }
  SUBCASE("doubling every lambda doubles the totals") {
    Lambdas two;
    two.adv = two.r1 = two.style_recon = two.cycle = two.ch_cyc = two.ds = two.sup = 2;
    for (auto [model, mode] : {std::pair{&gated, Mode::HMS}, std::pair{&plain, Mode::Baseline}}) {
      const Objective one = objective(*model, batch, mode), dbl = objective(*model, batch, mode, two);
      CHECK(dbl.generator_total.item() == doctest::Approx(2 * one.generator_total.item()).epsilon(1e-5));
      CHECK(dbl.discriminator_total.item() == doctest::Approx(2 * one.discriminator_total.item()).epsilon(1e-5));
    }
  }
  SUBCASE("permutation invariance") {
    const Batch big = make_batch(3, 3, 70, true);
    Batch p;
    p.x_a = permute(big.x_a, {2, 0, 1});
    p.x_a_pair = permute(big.x_a_pair, {2, 0, 1});
    p.z_to_b1 = permute(big.z_to_b1, {2, 0, 1});
    p.z_to_b2 = permute(big.z_to_b2, {2, 0, 1});
    p.x_b = permute(big.x_b, {1, 2, 0});
    p.z_to_a1 = permute(big.z_to_a1, {1, 2, 0});
    p.z_to_a2 = permute(big.z_to_a2, {1, 2, 0});
    for (auto [model, mode] : {std::pair{&gated, Mode::HMS}, std::pair{&plain, Mode::Baseline}}) {
      const Objective a = objective(*model, big, mode), b = objective(*model, p, mode);
      CHECK(b.generator_total.item() == doctest::Approx(a.generator_total.item()).epsilon(1e-5));
      CHECK(b.discriminator_total.item() == doctest::Approx(a.discriminator_total.item()).epsilon(1e-5));
    }
  }
  SUBCASE("csv row") {
    CHECK(std::string(LossReport::kCsvHeader).find(",sup") != std::string::npos);
    const std::string row = hmu.report.csv_row(7);
    CHECK(row.rfind("7,", 0) == 0);
    CHECK(row.back() == ',');
    CHECK(hms.report.csv_row(7).back() != ',');
  }
}

TEST_CASE("loss gradients match finite differences") {
  for (const auto& c : m21::testing::make_loss_checks()) {
    for (unsigned seed : {1u, 2u}) {
      INFO(c.name << " seed " << seed);
      CHECK(c.max_rel_error(seed) < 1e-3);
    }
  }
}
