// SPDX-License-Identifier: Apache-2.0
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "m21/cmnist.hpp"
#include "m21/metrics.hpp"
#include "m21/trainer.hpp"

namespace py = pybind11;
using namespace m21;

namespace {

using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

/// Splits a [N, ...] uint8 array into per-image views. The array must outlive them.
std::vector<metrics::ImageView> image_views(const ByteArray& a) {
  if (a.ndim() < 2) throw py::value_error("expected an array of images with a leading batch axis");
  const auto n = static_cast<std::size_t>(a.shape(0));
  const std::size_t per = n ? static_cast<std::size_t>(a.size()) / n : 0;
  if (per % 3) throw py::value_error("images must be RGB (a multiple of 3 bytes each)");
  std::vector<metrics::ImageView> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(a.data() + i * per, per);
  return out;
}

metrics::Channel parse_channel(const std::string& s) {
  if (s == "red" || s == "Red" || s == "R") return metrics::Channel::Red;
  if (s == "green" || s == "Green" || s == "G") return metrics::Channel::Green;
  if (s == "blue" || s == "Blue" || s == "B") return metrics::Channel::Blue;
  throw py::value_error("channel must be red, green or blue, got '" + s + "'");
}

gan::DomainId parse_domain(const std::string& s) {
  if (s == "A") return gan::DomainId::A;
  if (s == "B") return gan::DomainId::B;
  throw py::value_error("domain must be 'A' (color) or 'B' (gray), got '" + s + "'");
}

py::dict report_dict(const metrics::MetricsReport& r) {
  py::dict d;
  d["Red"] = r.recall_red;
  d["Green"] = r.recall_green;
  d["Blue"] = r.recall_blue;
  d["Recall"] = r.recall_avg;
  d["Count"] = r.unique_color_count;
  d["MSE"] = r.mse ? py::cast(*r.mse) : py::none();
  d["n_bins"] = r.n_bins;
  return d;
}

struct PyDataset {
  cmnist::PairedDataset ds;

  ByteArray color() const {
    ByteArray a({static_cast<py::ssize_t>(ds.samples.size()), py::ssize_t{28}, py::ssize_t{28}, py::ssize_t{3}});
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
      std::memcpy(a.mutable_data() + i * cmnist::kPixels * 3, ds.samples[i].color.data(), cmnist::kPixels * 3);
    return a;
  }
  ByteArray gray() const {
    ByteArray a({static_cast<py::ssize_t>(ds.samples.size()), py::ssize_t{28}, py::ssize_t{28}});
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
      std::memcpy(a.mutable_data() + i * cmnist::kPixels, ds.samples[i].gray.data(), cmnist::kPixels);
    return a;
  }
  py::array_t<float> colors() const {
    py::array_t<float> a({static_cast<py::ssize_t>(ds.samples.size()), py::ssize_t{3}});
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
      std::memcpy(a.mutable_data() + i * 3, ds.samples[i].c.data(), 3 * sizeof(float));
    return a;
  }
  ByteArray labels() const {
    ByteArray a(static_cast<py::ssize_t>(ds.samples.size()));
    for (std::size_t i = 0; i < ds.samples.size(); ++i) a.mutable_data()[i] = ds.samples[i].label;
    return a;
  }
};

class PyModel {
 public:
  explicit PyModel(const std::filesystem::path& checkpoint) : model_(train::load_trained_model(checkpoint, &config_)) {}

  /// uint8 images [N,28,28] (gray) or [N,28,28,3] (color) translated into `target`.
  ByteArray translate(const ByteArray& images, const std::string& target, std::uint64_t seed) const {
    const gan::DomainId to = parse_domain(target), from = gan::other(to);
    const int cin = gan::domain(from).channels, cout = gan::domain(to).channels;
    const std::size_t per = cmnist::kPixels * cin;
    if (images.ndim() < 1 || (images.shape(0) && static_cast<std::size_t>(images.size() / images.shape(0)) != per))
      throw py::value_error("expected " + std::string(cin == 3 ? "[N,28,28,3]" : "[N,28,28]") + " uint8 images");
    const auto n = static_cast<std::size_t>(images.shape(0));
    std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(n), 28, 28};
    if (cout == 3) shape.push_back(3);
    ByteArray out(shape);
    Rng rng(seed);
    NoGradGuard no_grad;
    py::gil_scoped_release release;
    for (std::size_t first = 0; first < n; first += 50) {
      const std::size_t count = std::min<std::size_t>(50, n - first);
      std::vector<std::span<const std::uint8_t>> views;
      for (std::size_t i = first; i < first + count; ++i) views.emplace_back(images.data() + i * per, per);
      const Tensor x = cmnist::to_model_tensor(views, cin);
      gan::StyleSource style = gan::ZeroStyle{};
      if (!(model_.config().gating && !gan::is_multi(to))) {
        Tensor z(Shape{x.dim(0), model_.config().latent_dim});
        for (auto& v : z.mutable_data()) v = static_cast<float>(rng.normal());
        style = gan::LatentStyle{z};
      }
      const Tensor y = model_.translate(x, from, to, style);
      for (std::size_t i = 0; i < count; ++i) {
        const auto bytes = cmnist::from_model_tensor(y, static_cast<std::int64_t>(i));
        std::memcpy(out.mutable_data() + (first + i) * bytes.size(), bytes.data(), bytes.size());
      }
    }
    return out;
  }

  py::dict evaluate(const PyDataset& test, int n_bins, std::uint64_t seed, std::size_t limit) const {
    metrics::MetricsReport r;
    {
      py::gil_scoped_release release;
      r = train::evaluate(model_, test.ds, n_bins, seed, limit);
    }
    return report_dict(r);
  }

  std::string config() const { return config_.to_json(); }
  std::uint64_t step() const { return model_.step; }

 private:
  train::TrainConfig config_;
  gan::Model model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Colorized MNIST data, color metrics and the asymmetric translation model";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<PyDataset>(m, "PairedDataset")
      .def_property_readonly("color", &PyDataset::color, "uint8 [N,28,28,3]")
      .def_property_readonly("gray", &PyDataset::gray, "uint8 [N,28,28]")
      .def_property_readonly("c", &PyDataset::colors, "float32 [N,3] color vectors")
      .def_property_readonly("labels", &PyDataset::labels)
      .def_property_readonly("seed", [](const PyDataset& d) { return d.ds.seed; })
      .def("__len__", [](const PyDataset& d) { return d.ds.samples.size(); })
      .def("save", [](const PyDataset& d, const std::filesystem::path& p) { cmnist::write_dataset(d.ds, p); });

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& images, const std::filesystem::path& labels, std::uint64_t seed,
         std::size_t count) {
        const auto items = cmnist::load_mnist_idx(images, labels);
        return PyDataset{cmnist::generate_dataset(items, seed, count ? count : items.size())};
      },
      py::arg("images"), py::arg("labels"), py::arg("seed"), py::arg("count") = 0,
      "Colorize MNIST IDX files (optionally gzip'd); count 0 takes every digit.");
  m.def(
      "read_dataset", [](const std::filesystem::path& p) { return PyDataset{cmnist::read_dataset(p)}; },
      py::arg("path"));

  m.def(
      "color_recall",
      [](const ByteArray& real, const ByteArray& generated, const std::string& channel, int n) {
        return metrics::color_recall(image_views(real), image_views(generated), parse_channel(channel), n);
      },
      py::arg("real"), py::arg("generated"), py::arg("channel"), py::arg("n") = 8);
  m.def(
      "unique_color_count", [](const ByteArray& images) { return metrics::unique_color_count(image_views(images)); },
      py::arg("images"));
  m.def(
      "color_report",
      [](const ByteArray& real, const ByteArray& generated, int n) {
        return report_dict(metrics::color_report(image_views(real), image_views(generated), n));
      },
      py::arg("real"), py::arg("generated"), py::arg("n") = 8);

  m.def(
      "train",
      [](const std::string& config_json, const std::function<void(std::uint64_t, double, double)>& progress) {
        const auto config = train::TrainConfig::from_json(config_json);
        train::RunLog log;
        {
          py::gil_scoped_release release;
          log = train::train(config, [&](std::uint64_t step, const losses::LossReport& r) {
            if (!progress) return;
            py::gil_scoped_acquire acquire;
            progress(step, r.adv_d, r.adv_g);
          });
        }
        py::list snaps;
        for (const auto& s : log.snapshots) {
          py::dict d = report_dict(s.report);
          d["step"] = s.step;
          snaps.append(d);
        }
        return snaps;
      },
      py::arg("config_json"), py::arg("progress") = nullptr,
      "Run training from a JSON config; returns the metric snapshots.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("translate", &PyModel::translate, py::arg("images"), py::arg("target"), py::arg("seed") = 0)
      .def("evaluate", &PyModel::evaluate, py::arg("test"), py::arg("n_bins") = 8, py::arg("seed") = 0,
           py::arg("limit") = 0)
      .def_property_readonly("config", &PyModel::config)
      .def_property_readonly("step", &PyModel::step);
}
