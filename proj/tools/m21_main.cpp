// SPDX-License-Identifier: Apache-2.0
// m21: dataset generation, training, translation, evaluation and histogram export.
#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "m21/cmnist.hpp"
#include "m21/metrics.hpp"
#include "m21/trainer.hpp"

using namespace m21;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kUsage = 2 };

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) throw Error("cannot write " + path);
}

cmnist::Split parse_split(const std::string& s) { return s == "test" ? cmnist::Split::Test : cmnist::Split::Train; }

std::vector<metrics::ImageView> colors(const cmnist::PairedDataset& ds) {
  std::vector<metrics::ImageView> v;
  for (const auto& s : ds.samples) v.emplace_back(s.color);
  return v;
}

double gray_mse(const cmnist::PairedDataset& generated, const cmnist::PairedDataset& real) {
  double se = 0;
  for (std::size_t i = 0; i < real.samples.size(); ++i) {
    for (std::size_t p = 0; p < cmnist::kPixels; ++p) {
      const double d = (double(generated.samples[i].gray[p]) - double(real.samples[i].gray[p])) / 255.0;
      se += d * d;
    }
  }
  return se / static_cast<double>(real.samples.size() * cmnist::kPixels);
}

struct GenDataset {
  std::string images, labels, out, split = "train";
  std::uint64_t seed = 0;
  std::size_t count = 0;

  void run() const {
    const auto items = cmnist::load_mnist_idx(images, labels);
    const std::size_t n = count ? count : items.size();
    const auto ds = cmnist::generate_dataset(items, seed, n, parse_split(split));
    cmnist::write_dataset(ds, out);
    std::printf("wrote %zu samples (seed %llu) to %s\n", n, static_cast<unsigned long long>(seed), out.c_str());
  }
};

struct Train {
  std::string config, out_dir, resume;
  std::uint64_t steps = 0;

  void run() const {
    train::TrainConfig c = train::TrainConfig::load(config);
    if (!out_dir.empty()) c.out_dir = out_dir;
    if (!resume.empty()) c.resume = resume;
    if (steps) c.steps = steps;
    c.validate();
    const auto log = train::train(c, [&](std::uint64_t step, const losses::LossReport& r) {
      if (step % 100 == 0 || step == c.steps) {
        std::fprintf(stderr, "step %llu  adv_d %.4f adv_g %.4f cycle %.4f ds %.4f\n",
                     static_cast<unsigned long long>(step), r.adv_d, r.adv_g, r.cycle, r.ds);
      }
    });
    if (!log.snapshots.empty()) std::cout << log.snapshots.back().report.to_text();
  }
};

struct Translate {
  std::string model, input, target = "A", out;
  int num_styles = 1;
  std::uint64_t seed = 0;

  void run() const {
    const gan::Model m = train::load_trained_model(model);
    const auto src = cmnist::read_dataset(input);
    const gan::DomainId to = target == "A" ? gan::DomainId::A : gan::DomainId::B;
    const gan::DomainId from = gan::other(to);
    int styles = num_styles;
    const bool zero = m.config().gating && !gan::is_multi(to);
    if (zero && styles > 1) {
      std::fprintf(stderr, "warning: domain %s is uni-modal; ignoring --num-styles %d and using the zero style\n",
                   gan::domain(to).name, styles);
      styles = 1;
    }
    Rng rng(seed);
    cmnist::PairedDataset result;
    result.seed = seed;
    constexpr std::size_t kChunk = 50;
    NoGradGuard no_grad;
    for (std::size_t first = 0; first < src.samples.size(); first += kChunk) {
      const std::size_t count = std::min(kChunk, src.samples.size() - first);
      std::vector<std::span<const std::uint8_t>> images;
      for (std::size_t i = first; i < first + count; ++i) {
        if (from == gan::DomainId::A) images.emplace_back(src.samples[i].color);
        else images.emplace_back(src.samples[i].gray);
      }
      const Tensor x = cmnist::to_model_tensor(images, gan::domain(from).channels);
      std::vector<Tensor> outputs;
      for (int k = 0; k < styles; ++k) {
        gan::StyleSource style = gan::ZeroStyle{};
        if (!zero) {
          Tensor z(Shape{x.dim(0), m.config().latent_dim});
          for (auto& v : z.mutable_data()) v = static_cast<float>(rng.normal());
          style = gan::LatentStyle{z};
        }
        outputs.push_back(m.translate(x, from, to, style));
      }
      for (std::size_t i = 0; i < count; ++i) {
        for (const Tensor& y : outputs) {
          const auto& s = src.samples[first + i];
          cmnist::PairedSample g{s.color, s.gray, {0, 0, 0}, s.label};
          const auto bytes = cmnist::from_model_tensor(y, static_cast<std::int64_t>(i));
          if (to == gan::DomainId::A) std::copy(bytes.begin(), bytes.end(), g.color.begin());
          else std::copy(bytes.begin(), bytes.end(), g.gray.begin());
          result.samples.push_back(g);
        }
      }
    }
    cmnist::write_dataset(result, out);
    std::printf("wrote %zu translations to domain %s into %s\n", result.samples.size(), gan::domain(to).name,
                out.c_str());
  }
};

struct Eval {
  std::string model, generated, real, out;
  int bins = 8;
  std::uint64_t seed = 0;
  std::size_t limit = 0;

  void run() const {
    const auto real_set = cmnist::read_dataset(real, cmnist::Split::Test);
    metrics::MetricsReport report;
    if (!model.empty()) {
      report = train::evaluate(train::load_trained_model(model), real_set, bins, seed, limit);
    } else {
      const auto gen = cmnist::read_dataset(generated);
      report = metrics::color_report(colors(real_set), colors(gen), bins);
      if (gen.samples.size() == real_set.samples.size()) report.mse = gray_mse(gen, real_set);
    }
    std::cout << report.to_text();
    if (!out.empty()) write_text(out, report.to_text());
  }
};

struct Hist {
  std::string real, generated, out;
  int bins = 8;

  void run() const {
    const auto r = cmnist::read_dataset(real), g = cmnist::read_dataset(generated);
    const auto rows = metrics::histogram_export(colors(r), colors(g), bins);
    const std::string csv = metrics::histogram_csv(rows);
    if (out.empty()) std::cout << csv;
    else write_text(out, csv);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"m21: asymmetric many-to-one image translation on Colorized MNIST"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenDataset gd;
  auto* gen = app.add_subcommand("gen-dataset", "Colorize MNIST into a CMN1 paired dataset");
  gen->add_option("--mnist-images", gd.images, "MNIST IDX image file (.gz accepted)")->required()->check(CLI::ExistingFile);
  gen->add_option("--mnist-labels", gd.labels, "MNIST IDX label file (.gz accepted)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gd.out, "Output CMN1 file")->required();
  gen->add_option("--seed", gd.seed, "Color seed")->capture_default_str();
  gen->add_option("--count", gd.count, "Number of samples (0 = every MNIST image)")->capture_default_str();
  gen->add_option("--split", gd.split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  Train tr;
  auto* trn = app.add_subcommand("train", "Train a model from a JSON run config");
  trn->add_option("--config", tr.config, "Run config (flat JSON)")->required()->check(CLI::ExistingFile);
  trn->add_option("--out-dir", tr.out_dir, "Output directory (overrides out_dir in the config)");
  trn->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  trn->add_option("--steps", tr.steps, "Total steps (overrides steps in the config)");

  Translate tl;
  auto* trl = app.add_subcommand("translate", "Translate a CMN1 dataset into one domain");
  trl->add_option("--model", tl.model, "Checkpoint (.m21c)")->required()->check(CLI::ExistingFile);
  trl->add_option("--input", tl.input, "Input CMN1 dataset")->required()->check(CLI::ExistingFile);
  trl->add_option("--target-domain", tl.target, "A (color) or B (grayscale)")
      ->check(CLI::IsMember({"A", "B"}))
      ->capture_default_str();
  trl->add_option("--num-styles", tl.num_styles, "Styles per input; uni-modal targets use one")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  trl->add_option("--seed", tl.seed, "Latent code seed")->capture_default_str();
  trl->add_option("--out", tl.out, "Output CMN1 file (translations replace the target-domain images)")->required();

  Eval ev;
  auto* evl = app.add_subcommand("eval", "Color Recall, Unique Color Count and MSE");
  auto* m_opt = evl->add_option("--model", ev.model, "Checkpoint to evaluate on --real")->check(CLI::ExistingFile);
  auto* g_opt = evl->add_option("--generated", ev.generated, "CMN1 file of translations")->check(CLI::ExistingFile);
  m_opt->excludes(g_opt);
  evl->add_option("--real", ev.real, "Real CMN1 test set")->required()->check(CLI::ExistingFile);
  evl->add_option("--bins", ev.bins, "Histogram bins")->check(CLI::PositiveNumber)->capture_default_str();
  evl->add_option("--seed", ev.seed, "Latent code seed for --model")->capture_default_str();
  evl->add_option("--limit", ev.limit, "Evaluate only the first N samples (0 = all)")->capture_default_str();
  evl->add_option("--out", ev.out, "Also write the report to this file");

  Hist hs;
  auto* hst = app.add_subcommand("hist", "Per-channel peak-intensity histograms as CSV");
  hst->add_option("--real", hs.real, "Real CMN1 dataset")->required()->check(CLI::ExistingFile);
  hst->add_option("--generated", hs.generated, "Generated CMN1 dataset")->required()->check(CLI::ExistingFile);
  hst->add_option("--bins", hs.bins, "Histogram bins")->check(CLI::PositiveNumber)->capture_default_str();
  hst->add_option("--out", hs.out, "Output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
    if (*evl && !*m_opt && !*g_opt) throw CLI::RequiredError("eval needs --model or --generated");
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) gd.run();
    else if (*trn) tr.run();
    else if (*trl) tl.run();
    else if (*evl) ev.run();
    else if (*hst) hs.run();
    return kOk;
  } catch (const cmnist::ParseError& e) {
    std::fprintf(stderr, "error: malformed input: %s\n", e.what());
    return kUsage;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
}
