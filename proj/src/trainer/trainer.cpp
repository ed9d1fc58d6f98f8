// SPDX-License-Identifier: Apache-2.0
#include "m21/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "io/bytes.hpp"
#include "m21/ops.hpp"

namespace m21::train {

using gan::DomainId;
using losses::Mode;
using nlohmann::json;

// ---- config -------------------------------------------------------------------------

gan::ModelConfig TrainConfig::model_config() const {
  gan::ModelConfig m = model;
  m.gating = losses::asymmetric(mode);
  m.init_seed = seed;
  return m;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ContractError("train config: " + what); };
  if (steps == 0) fail("steps must be > 0");
  if (batch < 2) fail("batch must be >= 2 (one color and one gray source at least)");
  for (double lr : {lr_g, lr_d, lr_e, lr_f})
    if (!(lr >= 0) || !std::isfinite(lr)) fail("learning rates must be finite and >= 0");
  if (!(clip_norm > 0)) fail("clip_norm must be > 0");
  if (n_bins < 1) fail("n_bins must be >= 1");
  const auto& l = lambdas;
  for (double v : {l.adv, l.r1, l.style_recon, l.cycle, l.ch_cyc, l.ds, l.sup})
    if (!std::isfinite(v)) fail("lambdas must be finite");
}

namespace {

json config_json(const TrainConfig& c) {
  const auto& l = c.lambdas;
  const auto& m = c.model;
  return json{{"mode", losses::mode_name(c.mode)},
              {"steps", c.steps},
              {"batch", c.batch},
              {"lr_g", c.lr_g},
              {"lr_d", c.lr_d},
              {"lr_e", c.lr_e},
              {"lr_f", c.lr_f},
              {"seed", c.seed},
              {"lambda_adv", l.adv},
              {"lambda_r1", l.r1},
              {"lambda_sty", l.style_recon},
              {"lambda_cyc", l.cycle},
              {"lambda_ch_cyc", l.ch_cyc},
              {"lambda_ds", l.ds},
              {"lambda_sup", l.sup},
              {"ds_decay_steps", c.ds_decay_steps},
              {"clip_norm", c.clip_norm},
              {"eval_interval", c.eval_interval},
              {"eval_limit", c.eval_limit},
              {"n_bins", c.n_bins},
              {"out_dir", c.out_dir},
              {"train_data", c.train_data},
              {"test_data", c.test_data},
              {"resume", c.resume},
              {"base_channels", m.base_channels},
              {"max_channels", m.max_channels},
              {"style_dim", m.style_dim},
              {"latent_dim", m.latent_dim},
              {"mapping_hidden", m.mapping_hidden},
              {"leaky_slope", m.leaky_slope}};
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ContractError(std::string("train config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

std::string TrainConfig::to_json() const { return config_json(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw cmnist::ParseError(std::string("train config: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw ContractError("train config: expected a JSON object");
  TrainConfig c;
  const json known = config_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ContractError("train config: unknown key '" + key + "'");
  }
  if (j.contains("mode")) c.mode = losses::parse_mode(j.at("mode").get<std::string>());
  take(j, "steps", c.steps);
  take(j, "batch", c.batch);
  take(j, "lr_g", c.lr_g);
  take(j, "lr_d", c.lr_d);
  take(j, "lr_e", c.lr_e);
  take(j, "lr_f", c.lr_f);
  take(j, "seed", c.seed);
  take(j, "lambda_adv", c.lambdas.adv);
  take(j, "lambda_r1", c.lambdas.r1);
  take(j, "lambda_sty", c.lambdas.style_recon);
  take(j, "lambda_cyc", c.lambdas.cycle);
  take(j, "lambda_ch_cyc", c.lambdas.ch_cyc);
  take(j, "lambda_ds", c.lambdas.ds);
  take(j, "lambda_sup", c.lambdas.sup);
  take(j, "ds_decay_steps", c.ds_decay_steps);
  take(j, "clip_norm", c.clip_norm);
  take(j, "eval_interval", c.eval_interval);
  take(j, "eval_limit", c.eval_limit);
  take(j, "n_bins", c.n_bins);
  take(j, "out_dir", c.out_dir);
  take(j, "train_data", c.train_data);
  take(j, "test_data", c.test_data);
  take(j, "resume", c.resume);
  take(j, "base_channels", c.model.base_channels);
  take(j, "max_channels", c.model.max_channels);
  take(j, "style_dim", c.model.style_dim);
  take(j, "latent_dim", c.model.latent_dim);
  take(j, "mapping_hidden", c.model.mapping_hidden);
  take(j, "leaky_slope", c.model.leaky_slope);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return from_json(std::string(bytes.begin(), bytes.end()));
}

// ---- optimizer ------------------------------------------------------------------------

Adam::Adam(std::string name, std::vector<std::pair<std::string, Tensor>> params, double rate)
    : lr(rate), name_(std::move(name)), params_(std::move(params)) {
  for (const auto& [n, p] : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::step(std::uint64_t t, double grad_scale) {
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Tensor g = params_[k].second.grad();
    if (!g.defined()) continue;  // zero gradient: m stays 0 (beta1 = 0), so the update is 0
    auto p = Tensor(params_[k].second).mutable_data();
    auto gd = g.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(gd[i]) * grad_scale;
      m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * gi);
      v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi);
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
}

void Adam::save(gan::Checkpoint& ck) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& [n, p] = params_[k];
    Tensor m(p.shape()), v(p.shape());
    std::copy(m_[k].begin(), m_[k].end(), m.mutable_data().begin());
    std::copy(v_[k].begin(), v_[k].end(), v.mutable_data().begin());
    ck.blobs.emplace_back("adam/" + name_ + "/m/" + n, m);
    ck.blobs.emplace_back("adam/" + name_ + "/v/" + n, v);
  }
}

void Adam::load(const gan::Checkpoint& ck) {
  std::map<std::string_view, const Tensor*> blobs;
  for (const auto& [n, t] : ck.blobs) blobs.emplace(n, &t);
  auto fetch = [&](const std::string& key, std::vector<float>& out) {
    auto it = blobs.find(key);
    if (it == blobs.end()) throw Error("checkpoint: missing optimizer state " + key);
    if (static_cast<std::size_t>(it->second->numel()) != out.size()) {
      throw Error("checkpoint: optimizer state " + key + " has the wrong size");
    }
    std::copy(it->second->data().begin(), it->second->data().end(), out.begin());
  };
  for (std::size_t k = 0; k < params_.size(); ++k) {
    fetch("adam/" + name_ + "/m/" + params_[k].first, m_[k]);
    fetch("adam/" + name_ + "/v/" + params_[k].first, v_[k]);
  }
}

double grad_norm(const std::vector<Tensor>& params) {
  double s = 0;
  for (const auto& p : params) {
    const Tensor g = p.grad();
    if (!g.defined()) continue;
    for (float x : g.data()) s += static_cast<double>(x) * x;
  }
  return std::sqrt(s);
}

// ---- trainer --------------------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, Tensor>> group(const gan::Model& model, std::initializer_list<const char*> prefixes) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& e : model.params().entries()) {
    for (const char* p : prefixes)
      if (e.name.rfind(p, 0) == 0) out.emplace_back(e.name, e.value);
  }
  return out;
}

std::vector<Tensor> tensors(std::initializer_list<const Adam*> opts) {
  std::vector<Tensor> out;
  for (const Adam* o : opts)
    for (const auto& [n, p] : o->params()) out.push_back(p);
  return out;
}

Tensor normal_matrix(std::int64_t rows, std::int64_t cols, Rng& rng) {
  Tensor t(Shape{rows, cols});
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.normal());
  return t;
}

std::string step_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06llu.m21c", static_cast<unsigned long long>(step));
  return buf;
}

}  // namespace

Trainer::Trainer(TrainConfig config)
    : config_((config.validate(), std::move(config))),
      model_(config_.model_config()),
      d_("D", group(model_, {"D."}), config_.lr_d),
      g_("G", group(model_, {"G.", "C."}), config_.lr_g),
      e_("E", group(model_, {"E."}), config_.lr_e),
      f_("F", group(model_, {"F."}), config_.lr_f) {}

losses::Batch Trainer::sample_batch(const cmnist::PairedDataset& train) const {
  if (train.samples.empty()) throw ContractError("sample_batch: empty training set");
  Rng rng(config_.seed, model_.step);
  const std::int64_t na = config_.batch / 2, nb = config_.batch - na;
  const auto n = train.samples.size();
  std::vector<std::span<const std::uint8_t>> color, pair, gray;
  for (std::int64_t i = 0; i < na; ++i) {
    const auto& s = train.samples[rng.below(n)];
    color.emplace_back(s.color);
    pair.emplace_back(s.gray);
  }
  for (std::int64_t i = 0; i < nb; ++i) gray.emplace_back(train.samples[rng.below(n)].gray);
  const auto latent = model_.config().latent_dim;
  losses::Batch b;
  b.x_a = cmnist::to_model_tensor(color, 3);
  b.x_b = cmnist::to_model_tensor(gray, 1);
  if (config_.mode == Mode::HMS) b.x_a_pair = cmnist::to_model_tensor(pair, 1);
  b.z_to_a1 = normal_matrix(nb, latent, rng);
  b.z_to_a2 = normal_matrix(nb, latent, rng);
  if (!losses::asymmetric(config_.mode)) {
    b.z_to_b1 = normal_matrix(na, latent, rng);
    b.z_to_b2 = normal_matrix(na, latent, rng);
  }
  return b;
}

losses::LossReport Trainer::train_step(const losses::Batch& batch) {
  for (const auto& e : model_.params().entries()) Tensor(e.value).zero_grad();
  losses::Lambdas lambdas = config_.lambdas;
  if (config_.ds_decay_steps > 0) {
    const double left = 1.0 - static_cast<double>(model_.step) / static_cast<double>(config_.ds_decay_steps);
    lambdas.ds *= std::max(0.0, left);
  }
  const std::uint64_t t = model_.step + 1;
  auto diverged = [&](const std::string& what) {
    std::filesystem::path dump;
    if (!config_.out_dir.empty()) {
      dump = std::filesystem::path(config_.out_dir) / ("diverged_" + step_name(t));
      gan::write_checkpoint(checkpoint(), dump);
    }
    return Diverged("step " + std::to_string(t) + ": " + what + (dump.empty() ? "" : "; state dumped to " + dump.string()),
                    dump);
  };

  losses::LossReport report;
  Tape outer;
  const losses::GeneratorPass pass = losses::generator_pass(model_, batch, config_.mode, lambdas);
  report = pass.report;
  {
    Tape inner;
    const Tensor d_total = losses::discriminator_objective(model_, inner, batch, pass, lambdas, report);
    inner.backward(d_total);
  }
  const double d_norm = grad_norm(tensors({&d_}));
  if (!std::isfinite(report.adv_d) || !std::isfinite(report.r1) || !std::isfinite(d_norm)) {
    throw diverged("non-finite discriminator loss or gradient");
  }
  d_.step(t, d_norm > config_.clip_norm ? config_.clip_norm / d_norm : 1.0);

  const Tensor adv_g = losses::generator_adversarial(model_, pass);
  report.adv_g = adv_g.item();
  outer.backward(add(pass.total, mul_scalar(adv_g, static_cast<float>(lambdas.adv))));
  const double g_norm = grad_norm(tensors({&g_, &e_, &f_}));
  if (!report.all_finite() || !std::isfinite(g_norm)) throw diverged("non-finite generator loss or gradient");
  const double scale = g_norm > config_.clip_norm ? config_.clip_norm / g_norm : 1.0;
  g_.step(t, scale);
  e_.step(t, scale);
  f_.step(t, scale);
  model_.step = t;
  return report;
}

gan::Checkpoint Trainer::checkpoint() const {
  // out_dir and resume do not affect the trained state; leaving them out keeps
  // checkpoints of identical runs byte-identical wherever they are written.
  TrainConfig identity = config_;
  identity.out_dir.clear();
  identity.resume.clear();
  gan::Checkpoint ck = gan::model_checkpoint(model_, identity.to_json());
  for (const Adam* o : {&d_, &g_, &e_, &f_}) o->save(ck);
  return ck;
}

void Trainer::restore(const gan::Checkpoint& ck) {
  gan::load_model(model_, ck);
  for (Adam* o : {&d_, &g_, &e_, &f_}) o->load(ck);
}

// ---- evaluation -----------------------------------------------------------------------

Tensor ModelTranslator::to_gray(const Tensor& color, std::size_t, Rng& rng) {
  const auto n = color.dim(0);
  if (model_.config().gating) return model_.translate(color, DomainId::A, DomainId::B, gan::ZeroStyle{});
  return model_.translate(color, DomainId::A, DomainId::B,
                          gan::LatentStyle{normal_matrix(n, model_.config().latent_dim, rng)});
}

Tensor ModelTranslator::to_color(const Tensor& gray, std::size_t, Rng& rng) {
  return model_.translate(gray, DomainId::B, DomainId::A,
                          gan::LatentStyle{normal_matrix(gray.dim(0), model_.config().latent_dim, rng)});
}

Translations translate_dataset(Translator& translator, const cmnist::PairedDataset& test, std::uint64_t seed,
                               std::size_t limit) {
  const std::size_t n = limit ? std::min(limit, test.samples.size()) : test.samples.size();
  if (n == 0) throw ContractError("evaluate: empty test set");
  constexpr std::size_t kChunk = 50;
  Rng gray_rng(seed, 0x6772), color_rng(seed, 0x636f);
  Translations out;
  NoGradGuard no_grad;
  for (std::size_t first = 0; first < n; first += kChunk) {
    const std::size_t count = std::min(kChunk, n - first);
    std::vector<std::span<const std::uint8_t>> color, gray;
    for (std::size_t i = first; i < first + count; ++i) {
      color.emplace_back(test.samples[i].color);
      gray.emplace_back(test.samples[i].gray);
    }
    const Tensor to_b = translator.to_gray(cmnist::to_model_tensor(color, 3), first, gray_rng);
    const Tensor to_a = translator.to_color(cmnist::to_model_tensor(gray, 1), first, color_rng);
    for (std::size_t i = 0; i < count; ++i) {
      out.gray.push_back(cmnist::from_model_tensor(to_b, static_cast<std::int64_t>(i)));
      out.color.push_back(cmnist::from_model_tensor(to_a, static_cast<std::int64_t>(i)));
    }
  }
  return out;
}

metrics::MetricsReport evaluate(Translator& translator, const cmnist::PairedDataset& test, int n_bins,
                                std::uint64_t seed, std::size_t limit) {
  const Translations tr = translate_dataset(translator, test, seed, limit);
  const std::size_t n = tr.gray.size();
  double se = 0;
  std::vector<metrics::ImageView> real, generated;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& truth = test.samples[i].gray;
    for (std::size_t p = 0; p < truth.size(); ++p) {
      const double d = (static_cast<double>(tr.gray[i][p]) - static_cast<double>(truth[p])) / 255.0;
      se += d * d;
    }
    real.emplace_back(test.samples[i].color);
    generated.emplace_back(tr.color[i]);
  }
  metrics::MetricsReport r = metrics::color_report(real, generated, n_bins);
  r.mse = se / static_cast<double>(n * cmnist::kPixels);
  return r;
}

metrics::MetricsReport evaluate(const gan::Model& model, const cmnist::PairedDataset& test, int n_bins,
                                std::uint64_t seed, std::size_t limit) {
  ModelTranslator t(model);
  return evaluate(t, test, n_bins, seed, limit);
}

// ---- full run -------------------------------------------------------------------------

namespace {

std::string metrics_row(std::uint64_t step, const metrics::MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%llu,%.9g", static_cast<unsigned long long>(step),
                r.recall_red, r.recall_green, r.recall_blue, r.recall_avg,
                static_cast<unsigned long long>(r.unique_color_count), r.mse.value_or(NAN));
  return buf;
}

/// Opens a CSV for appending, keeping only rows up to `step` when resuming.
std::ofstream open_csv(const std::filesystem::path& path, const char* header, std::uint64_t step) {
  std::vector<std::string> keep{header};
  if (step > 0 && std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= step) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& l : keep) out << l << '\n';
  return out;
}

}  // namespace

RunLog train(const TrainConfig& config, const std::function<void(std::uint64_t, const losses::LossReport&)>& progress) {
  tune_allocator();
  config.validate();
  if (config.out_dir.empty()) throw ContractError("train config: out_dir is required");
  const auto train_set = cmnist::read_dataset(config.train_data, cmnist::Split::Train);
  const auto test_set = cmnist::read_dataset(config.test_data, cmnist::Split::Test);
  const std::filesystem::path out(config.out_dir);
  std::filesystem::create_directories(out);

  Trainer trainer(config);
  if (!config.resume.empty()) trainer.restore(gan::read_checkpoint(config.resume));
  if (trainer.step() >= config.steps) {
    throw ContractError("train: checkpoint is already at step " + std::to_string(trainer.step()));
  }
  {
    std::ofstream cfg(out / "config.json");
    cfg << config.to_json() << '\n';
  }
  auto log = open_csv(out / "log.csv", losses::LossReport::kCsvHeader, trainer.step());
  auto snaps = open_csv(out / "metrics.csv", kMetricsCsvHeader, trainer.step());

  RunLog run;
  while (trainer.step() < config.steps) {
    const losses::LossReport report = trainer.train_step(trainer.sample_batch(train_set));
    const std::uint64_t step = trainer.step();
    run.rows.emplace_back(step, report);
    log << report.csv_row(step) << '\n';
    if (progress) progress(step, report);
    if ((config.eval_interval && step % config.eval_interval == 0) || step == config.steps) {
      log.flush();
      Snapshot s{step, evaluate(trainer.model(), test_set, config.n_bins, config.seed, config.eval_limit)};
      snaps << metrics_row(step, s.report) << '\n' << std::flush;
      run.snapshots.push_back(s);
      gan::write_checkpoint(trainer.checkpoint(), out / step_name(step));
    }
  }
  return run;
}

gan::Model load_trained_model(const std::filesystem::path& path, TrainConfig* config) {
  const gan::Checkpoint ck = gan::read_checkpoint(path);
  TrainConfig c = TrainConfig::from_json(ck.config);
  gan::Model model(c.model_config());
  gan::load_model(model, ck);
  if (config) *config = c;
  return model;
}

void tune_allocator() {
#ifdef __GLIBC__
  // Activations are allocated and freed every step; keeping them on the heap
  // instead of fresh mmaps avoids page-fault churn.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace m21::train
