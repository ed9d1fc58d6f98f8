// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "m21/ops.hpp"
#include "m21/trainer.hpp"
#include "support/tmpdir.hpp"

using namespace m21;
using namespace m21::train;
using losses::Mode;

namespace {

TrainConfig tiny(Mode mode, std::uint64_t seed = 5) {
  TrainConfig c;
  c.mode = mode;
  c.steps = 4;
  c.batch = 4;
  c.seed = seed;
  c.model.base_channels = 4;
  c.model.max_channels = 8;
  c.model.style_dim = 4;
  c.model.latent_dim = 4;
  c.model.mapping_hidden = 8;
  return c;
}

const cmnist::PairedDataset& small_set() {
  static const cmnist::PairedDataset ds = [] {
    const auto items = cmnist::load_mnist_idx(M21_DATA_DIR "/mnist/t10k-images-idx3-ubyte.gz",
                                              M21_DATA_DIR "/mnist/t10k-labels-idx1-ubyte.gz");
    return cmnist::generate_dataset(std::span(items).first(64), 9, 64, cmnist::Split::Train);
  }();
  return ds;
}

bool same_params(const gan::Model& a, const gan::Model& b) {
  const auto& ea = a.params().entries();
  const auto& eb = b.params().entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    const auto x = ea[i].value.data(), y = eb[i].value.data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

std::vector<std::vector<float>> snapshot(const gan::Model& m, const std::string& prefix) {
  std::vector<std::vector<float>> out;
  for (const auto& t : m.params().with_prefix(prefix)) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) n += !l.empty();
  return n;
}

}  // namespace

TEST_CASE("train config json") {
  TrainConfig c = tiny(Mode::HMS, 11);
  c.lr_f = 3e-7;
  c.lambdas.ds = 0.5;
  c.train_data = "a.cmn";
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.mode == Mode::HMS);
  CHECK(back.lr_f == 3e-7);
  CHECK(back.model_config().gating);
  CHECK_FALSE(tiny(Mode::Baseline).model_config().gating);
  CHECK(back.model_config().init_seed == 11);

  const TrainConfig defaults = TrainConfig::from_json("{}");
  CHECK(defaults.steps == 5000);
  CHECK(defaults.batch == 16);
  CHECK(defaults.lr_g == 1e-4);
  CHECK(defaults.lambdas.ds == 1.0);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"stpes": 3})"), ContractError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"steps": 0})"), ContractError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"batch": 1})"), ContractError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"mode": "CYCLE"})"), ContractError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"steps": "many"})"), ContractError);
  CHECK_THROWS_AS(TrainConfig::from_json("{"), cmnist::ParseError);
}

TEST_CASE("adam") {
  Tensor p(Shape{2}, std::vector<float>{1.0f, -2.0f});
  p.set_requires_grad(true);
  Adam opt("x", {{"p", p}}, 0.1);
  // reference recursion with beta1 = 0, beta2 = 0.99
  double ref[2] = {1.0, -2.0}, v[2] = {0, 0};
  const float grads[3][2] = {{0.5f, -1.0f}, {0.25f, 0.0f}, {-2.0f, 3.0f}};
  for (int t = 1; t <= 3; ++t) {
    p.zero_grad();
    {
      Tape tape;
      const Tensor g(Shape{2}, std::vector<float>{grads[t - 1][0], grads[t - 1][1]});
      tape.backward(sum(mul(p, g)));
    }
    opt.step(t);
    for (int i = 0; i < 2; ++i) {
      const double gi = grads[t - 1][i];
      v[i] = static_cast<float>(0.99 * v[i] + 0.01 * gi * gi);
      const double vhat = v[i] / (1 - std::pow(0.99, t));
      ref[i] -= 0.1 * gi / (std::sqrt(vhat) + 1e-8);
      ref[i] = static_cast<float>(ref[i]);
    }
    CHECK(p.data()[0] == doctest::Approx(ref[0]).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(ref[1]).epsilon(1e-6));
  }
  // a zero gradient leaves the parameter bit-identical despite non-zero v
  CHECK(p.data()[1] == doctest::Approx(ref[1]));

  gan::Checkpoint ck;
  opt.save(ck);
  CHECK(ck.blobs.size() == 2);
  Tensor q(Shape{2}, 0.0f);
  Adam other("x", {{"p", q}}, 0.1);
  other.load(ck);
  gan::Checkpoint ck2;
  other.save(ck2);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto x = ck2.blobs[i].second.data(), y = ck.blobs[i].second.data();
    CHECK(std::vector<float>(x.begin(), x.end()) == std::vector<float>(y.begin(), y.end()));
  }
  Adam wrong("y", {{"p", q}}, 0.1);
  CHECK_THROWS_AS(wrong.load(ck), Error);
}

TEST_CASE("train step") {
  const auto& data = small_set();

  SUBCASE("deterministic") {
    Trainer a(tiny(Mode::HMU)), b(tiny(Mode::HMU));
    const auto ra = a.train_step(a.sample_batch(data));
    const auto rb = b.train_step(b.sample_batch(data));
    CHECK(ra.csv_row(1) == rb.csv_row(1));
    CHECK(same_params(a.model(), b.model()));
    CHECK(a.step() == 1);
    Trainer c(tiny(Mode::HMU, 6));
    c.train_step(c.sample_batch(data));
    CHECK_FALSE(same_params(a.model(), c.model()));
  }
  SUBCASE("finite reports in every mode") {
    for (Mode m : {Mode::Baseline, Mode::HMU, Mode::HMS}) {
      Trainer t(tiny(m));
      for (int i = 0; i < 3; ++i) {
        const auto r = t.train_step(t.sample_batch(data));
        CHECK(r.all_finite());
        CHECK(r.sup.has_value() == (m == Mode::HMS));
      }
    }
  }
  SUBCASE("uni-modal-only batches leave E and F untouched") {
    Trainer t(tiny(Mode::HMU));
    t.train_step(t.sample_batch(data));  // non-zero optimizer state first
    losses::Batch uni = t.sample_batch(data);
    uni.x_b = Tensor();
    uni.z_to_a1 = uni.z_to_a2 = Tensor();
    const auto e = snapshot(t.model(), "E."), f = snapshot(t.model(), "F.");
    std::vector<std::vector<float>> demod;
    for (const auto& w : t.model().demod_dense_weights()) demod.emplace_back(w.data().begin(), w.data().end());
    const auto g = snapshot(t.model(), "G.");
    const auto r = t.train_step(uni);
    CHECK(r.ds == 0.0);
    CHECK(r.style_recon == 0.0);
    CHECK(snapshot(t.model(), "E.") == e);
    CHECK(snapshot(t.model(), "F.") == f);
    std::vector<std::vector<float>> demod_after;
    for (const auto& w : t.model().demod_dense_weights()) demod_after.emplace_back(w.data().begin(), w.data().end());
    CHECK(demod_after == demod);
    CHECK(snapshot(t.model(), "G.") != g);  // content path still trains
  }
  SUBCASE("baseline trains the style path on gray targets") {
    Trainer t(tiny(Mode::Baseline));
    losses::Batch uni = t.sample_batch(data);
    uni.x_b = Tensor();
    uni.z_to_a1 = uni.z_to_a2 = Tensor();
    const auto f = snapshot(t.model(), "F.");
    const auto r = t.train_step(uni);
    CHECK(r.ds < 0.0);
    CHECK(snapshot(t.model(), "F.") != f);
  }
  SUBCASE("non-finite loss aborts with a dump") {
    TrainConfig c = tiny(Mode::HMU);
    c.out_dir = m21::testing::scratch_dir("trainer_nan").string();
    Trainer t(c);
    losses::Batch b = t.sample_batch(data);
    b.x_a.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    try {
      t.train_step(b);
      FAIL("expected Diverged");
    } catch (const Diverged& e) {
      CHECK(std::filesystem::exists(e.dump_path()));
      CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
  }
}

TEST_CASE("resume equals an uninterrupted run bitwise") {
  const auto& data = small_set();
  for (Mode m : {Mode::HMU, Mode::Baseline}) {
    Trainer straight(tiny(m));
    for (int i = 0; i < 5; ++i) straight.train_step(straight.sample_batch(data));

    Trainer first(tiny(m));
    for (int i = 0; i < 2; ++i) first.train_step(first.sample_batch(data));
    const auto bytes = gan::serialize_checkpoint(first.checkpoint());
    Trainer resumed(tiny(m));
    resumed.restore(gan::deserialize_checkpoint(bytes));
    CHECK(resumed.step() == 2);
    for (int i = 0; i < 3; ++i) resumed.train_step(resumed.sample_batch(data));

    CHECK(same_params(straight.model(), resumed.model()));
    CHECK(gan::serialize_checkpoint(straight.checkpoint()) == gan::serialize_checkpoint(resumed.checkpoint()));
  }
}

namespace {

/// Returns the ground truth of the test set it was built for.
class Oracle : public Translator {
 public:
  explicit Oracle(const cmnist::PairedDataset& ds) : ds_(ds) {}
  Tensor to_gray(const Tensor& color, std::size_t first, Rng&) override {
    std::vector<std::span<const std::uint8_t>> v;
    for (std::int64_t i = 0; i < color.dim(0); ++i) v.emplace_back(ds_.samples[first + i].gray);
    return cmnist::to_model_tensor(v, 1);
  }
  Tensor to_color(const Tensor& gray, std::size_t first, Rng&) override {
    std::vector<std::span<const std::uint8_t>> v;
    for (std::int64_t i = 0; i < gray.dim(0); ++i) v.emplace_back(ds_.samples[first + i].color);
    return cmnist::to_model_tensor(v, 3);
  }

 private:
  const cmnist::PairedDataset& ds_;
};

}  // namespace

TEST_CASE("evaluate") {
  const auto& data = small_set();
  Oracle oracle(data);
  const auto perfect = evaluate(oracle, data, 8, 1);
  REQUIRE(perfect.mse.has_value());
  CHECK(*perfect.mse == 0.0);
  CHECK(perfect.recall_red == 1.0);
  CHECK(perfect.recall_green == 1.0);
  CHECK(perfect.recall_blue == 1.0);
  CHECK(perfect.recall_avg == 1.0);
  CHECK(evaluate(oracle, data, 8, 1, 10).unique_color_count <= 10);

  const Trainer t(tiny(Mode::Baseline));
  const auto a = evaluate(t.model(), data, 8, 3), b = evaluate(t.model(), data, 8, 3);
  CHECK(a.to_text() == b.to_text());
  CHECK(*a.mse > 0.0);
  const std::string text = a.to_text();
  for (const char* key : {"Red=", "Green=", "Blue=", "Recall=", "Count=", "MSE="}) CHECK(text.find(key) != std::string::npos);

  cmnist::PairedDataset empty;
  CHECK_THROWS_AS(evaluate(oracle, empty, 8, 1), ContractError);
}

TEST_CASE("train run") {
  const auto dir = m21::testing::scratch_dir("trainer_run");
  cmnist::write_dataset(small_set(), dir / "train.cmn");
  cmnist::write_dataset(small_set(), dir / "test.cmn");
  TrainConfig c = tiny(Mode::HMS);
  c.steps = 1;
  c.eval_interval = 1000;
  c.eval_limit = 16;
  c.train_data = (dir / "train.cmn").string();
  c.test_data = (dir / "test.cmn").string();
  c.out_dir = (dir / "run").string();
  const RunLog log = train::train(c);
  CHECK(log.rows.size() == 1);
  REQUIRE(log.snapshots.size() == 1);
  std::size_t checkpoints = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "run")) checkpoints += e.path().extension() == ".m21c";
  CHECK(checkpoints == 1);
  CHECK(count_lines(dir / "run/log.csv") == 2);
  CHECK(count_lines(dir / "run/metrics.csv") == 2);

  TrainConfig loaded;
  const gan::Model m = load_trained_model(dir / "run/step_000001.m21c", &loaded);
  CHECK(m.step == 1);
  CHECK(loaded.mode == Mode::HMS);

  SUBCASE("resumed run continues the log") {
    TrainConfig more = c;
    more.steps = 3;
    more.eval_interval = 2;
    more.resume = (dir / "run/step_000001.m21c").string();
    const RunLog rest = train::train(more);
    CHECK(rest.rows.front().first == 2);
    CHECK(count_lines(dir / "run/log.csv") == 4);
    CHECK(std::filesystem::exists(dir / "run/step_000002.m21c"));
    CHECK(std::filesystem::exists(dir / "run/step_000003.m21c"));

    // same bytes as a run that never stopped
    TrainConfig whole = c;
    whole.steps = 3;
    whole.eval_interval = 2;
    whole.out_dir = (dir / "whole").string();
    train::train(whole);
    CHECK(m21::testing::read_bytes(dir / "whole/step_000003.m21c") ==
          m21::testing::read_bytes(dir / "run/step_000003.m21c"));
  }
  SUBCASE("missing data is an I/O error") {
    TrainConfig bad = c;
    bad.train_data = (dir / "nope.cmn").string();
    CHECK_THROWS_AS(train::train(bad), Error);
  }
}
