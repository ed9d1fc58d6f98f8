// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "m21/cmnist.hpp"
#include "m21/losses.hpp"
#include "m21/metrics.hpp"
#include "m21/model.hpp"
#include "m21/rng.hpp"

namespace m21::train {

struct TrainConfig {
  losses::Mode mode = losses::Mode::HMU;
  std::uint64_t steps = 5000;
  int batch = 16;
  double lr_g = 1e-4, lr_d = 1e-4, lr_e = 1e-4, lr_f = 1e-6;
  std::uint64_t seed = 0;
  losses::Lambdas lambdas;
  /// When > 0, lambda_ds decays linearly to 0 over this many steps.
  std::uint64_t ds_decay_steps = 0;
  double clip_norm = 10.0;
  std::uint64_t eval_interval = 1000;  // checkpoint + metrics snapshot period; 0 = only at the end
  std::uint64_t eval_limit = 0;        // test samples per snapshot, 0 = all
  int n_bins = 8;
  std::string out_dir;
  std::string train_data, test_data;  // CMN1 files
  std::string resume;                 // optional checkpoint to continue from
  gan::ModelConfig model;             // gating is derived from mode; init_seed from seed

  /// Model config as trained: gating follows the mode, init_seed the seed.
  gan::ModelConfig model_config() const;
  /// Throws ContractError on invalid values.
  void validate() const;
  std::string to_json() const;
  /// Flat JSON object; absent keys keep their defaults, unknown keys are errors.
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Adam with beta1 = 0, beta2 = 0.99, eps = 1e-8 over one parameter group.
/// Undefined gradients count as zero.
class Adam {
 public:
  Adam(std::string name, std::vector<std::pair<std::string, Tensor>> params, double lr);
  void step(std::uint64_t t, double grad_scale = 1.0);
  double lr = 0;
  static constexpr double kBeta1 = 0.0, kBeta2 = 0.99, kEps = 1e-8;

  const std::string& name() const { return name_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  /// Moment buffers as checkpoint blobs named "adam/<group>/{m,v}/<param>".
  void save(gan::Checkpoint& ck) const;
  void load(const gan::Checkpoint& ck);

 private:
  std::string name_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<float>> m_, v_;
};

/// sqrt of the sum of squared gradients, accumulated in double.
double grad_norm(const std::vector<Tensor>& params);

/// Raised when a step produces a non-finite loss or gradient. A diagnostic
/// checkpoint has been written to `dump_path` when non-empty.
class Diverged : public Error {
 public:
  Diverged(const std::string& what, std::filesystem::path dump) : Error(what), dump_(std::move(dump)) {}
  const std::filesystem::path& dump_path() const { return dump_; }

 private:
  std::filesystem::path dump_;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  gan::Model& model() { return model_; }
  const gan::Model& model() const { return model_; }
  std::uint64_t step() const { return model_.step; }

  /// The batch for the current step, drawn from Rng(seed, step): half color
  /// sources (A->B), half gray sources (B->A), two latent codes per source.
  losses::Batch sample_batch(const cmnist::PairedDataset& train) const;
  /// One discriminator update, then one update of G, E, F and the mappers.
  losses::LossReport train_step(const losses::Batch& batch);

  gan::Checkpoint checkpoint() const;
  void restore(const gan::Checkpoint& ck);

 private:
  TrainConfig config_;
  gan::Model model_;
  Adam d_, g_, e_, f_;
};

/// The model side of evaluation, so tests can plug in a stub.
class Translator {
 public:
  virtual ~Translator() = default;
  /// Gray translations of color images [n,32,32,3]; `first` is the index of
  /// the first image in the test set. Gated models ignore `rng`.
  virtual Tensor to_gray(const Tensor& color, std::size_t first, Rng& rng) = 0;
  /// Color translations of gray images [n,32,32,1], one random style each.
  virtual Tensor to_color(const Tensor& gray, std::size_t first, Rng& rng) = 0;
};

/// Gated models translate to B with ZeroStyle; ungated ones with a random latent.
class ModelTranslator : public Translator {
 public:
  explicit ModelTranslator(const gan::Model& model) : model_(model) {}
  Tensor to_gray(const Tensor& color, std::size_t first, Rng& rng) override;
  Tensor to_color(const Tensor& gray, std::size_t first, Rng& rng) override;

 private:
  const gan::Model& model_;
};

/// MSE (pixels scaled to [0,1]) of the gray translations against the true
/// gray images, recall and unique count of the color translations against
/// the real color test set. `limit` > 0 evaluates only the first samples.
metrics::MetricsReport evaluate(Translator& translator, const cmnist::PairedDataset& test, int n_bins,
                                std::uint64_t seed, std::size_t limit = 0);
metrics::MetricsReport evaluate(const gan::Model& model, const cmnist::PairedDataset& test, int n_bins,
                                std::uint64_t seed, std::size_t limit = 0);

/// Translated bytes for every sample: gray (784 per image) and color (2352).
struct Translations {
  std::vector<std::vector<std::uint8_t>> gray, color;
};
Translations translate_dataset(Translator& translator, const cmnist::PairedDataset& test, std::uint64_t seed,
                               std::size_t limit = 0);

struct Snapshot {
  std::uint64_t step = 0;
  metrics::MetricsReport report;
};
struct RunLog {
  std::vector<std::pair<std::uint64_t, losses::LossReport>> rows;
  std::vector<Snapshot> snapshots;
};

/// Full run: loads the datasets, trains (optionally from config.resume),
/// writes log.csv, metrics.csv and step_NNNNNN.m21c (every eval_interval
/// and at the last step) into out_dir.
RunLog train(const TrainConfig& config, const std::function<void(std::uint64_t, const losses::LossReport&)>& progress = {});

/// Reads a checkpoint written by train() and rebuilds its model.
gan::Model load_trained_model(const std::filesystem::path& checkpoint, TrainConfig* config = nullptr);

inline constexpr const char* kMetricsCsvHeader = "step,Red,Green,Blue,Recall,Count,MSE";

/// Shrinks glibc's mmap threshold behaviour for the many short-lived
/// activation buffers of a training step. No-op elsewhere.
void tune_allocator();

}  // namespace m21::train
