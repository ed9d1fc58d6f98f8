// SPDX-License-Identifier: Apache-2.0
#include "m21/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace m21::metrics {

namespace {

void require_rgb(ImageView image) {
  if (image.empty() || image.size() % 3 != 0) {
    throw ShapeError("metrics: image of " + std::to_string(image.size()) + " bytes is not a non-empty RGB buffer");
  }
}

void require_bins(int n) {
  if (n < 1) throw ContractError("metrics: bin count must be >= 1, got " + std::to_string(n));
}

std::vector<std::uint64_t> histogram(std::span<const ImageView> images, Channel c, int n) {
  std::vector<std::uint64_t> f(static_cast<std::size_t>(n), 0);
  for (auto img : images) ++f[static_cast<std::size_t>(bin_index(max_channel_value(img, c), n))];
  return f;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* channel_name(Channel c) {
  switch (c) {
    case Channel::Red: return "red";
    case Channel::Green: return "green";
    case Channel::Blue: return "blue";
  }
  return "?";
}

std::vector<ImageView> color_views(const cmnist::PairedDataset& ds) {
  std::vector<ImageView> v;
  v.reserve(ds.samples.size());
  for (const auto& s : ds.samples) v.emplace_back(s.color);
  return v;
}

std::uint8_t max_channel_value(ImageView image, Channel c) {
  require_rgb(image);
  std::uint8_t m = 0;
  for (std::size_t i = static_cast<std::size_t>(c); i < image.size(); i += 3) m = std::max(m, image[i]);
  return m;
}

int bin_index(std::uint8_t p, int n) {
  require_bins(n);
  return static_cast<int>(std::min<std::int64_t>(std::int64_t{p} * n / 256, n - 1));
}

ChannelHistogram channel_frequencies(std::span<const ImageView> images, Channel c, int n) {
  require_bins(n);
  if (images.empty()) throw ContractError("channel_frequencies: empty dataset");
  return {c, n, histogram(images, c, n)};
}

double color_recall(std::span<const ImageView> real, std::span<const ImageView> generated, Channel c, int n) {
  require_bins(n);
  if (real.empty()) throw ContractError("color_recall: real dataset is empty");
  const auto f = histogram(real, c, n);
  const auto g = histogram(generated, c, n);
  double total = 0.0;
  int support = 0;
  for (int b = 0; b < n; ++b) {
    if (f[b] == 0) continue;
    ++support;
    total += std::min(static_cast<double>(g[b]) / static_cast<double>(f[b]), 1.0);
  }
  return total / support;
}

double recall_avg(double red, double green, double blue) { return (red + green + blue) / 3.0; }

std::array<std::uint8_t, 3> peak_pixel(ImageView image) {
  require_rgb(image);
  std::size_t best = 0;
  int best_max = -1, best_sum = 0;
  for (std::size_t p = 0; p < image.size(); p += 3) {
    const int mx = std::max({image[p], image[p + 1], image[p + 2]});
    const int sm = image[p] + image[p + 1] + image[p + 2];
    if (mx > best_max || (mx == best_max && sm < best_sum)) {
      best = p;
      best_max = mx;
      best_sum = sm;
    }
  }
  return {image[best], image[best + 1], image[best + 2]};
}

std::uint64_t unique_color_count(std::span<const ImageView> images) {
  if (images.empty()) throw ContractError("unique_color_count: empty dataset");
  std::set<std::array<std::uint8_t, 3>> colors;
  for (auto img : images) colors.insert(peak_pixel(img));
  return colors.size();
}

double mse(const Tensor& generated, const Tensor& target) {
  const std::pair<Tensor, Tensor> one[] = {{generated, target}};
  return mse(one);
}

double mse(std::span<const std::pair<Tensor, Tensor>> pairs) {
  if (pairs.empty()) throw ContractError("mse: no image pairs");
  double total = 0.0;
  std::int64_t count = 0;
  for (const auto& [g, t] : pairs) {
    if (g.shape() != t.shape()) {
      throw ShapeError("mse: generated " + shape_str(g.shape()) + " vs target " + shape_str(t.shape()));
    }
    auto a = g.data();
    auto b = t.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      total += d * d;
    }
    count += g.numel();
  }
  return total / static_cast<double>(count);
}

MetricsReport color_report(std::span<const ImageView> real, std::span<const ImageView> generated, int n) {
  MetricsReport r;
  r.n_bins = n;
  r.recall_red = color_recall(real, generated, Channel::Red, n);
  r.recall_green = color_recall(real, generated, Channel::Green, n);
  r.recall_blue = color_recall(real, generated, Channel::Blue, n);
  r.recall_avg = recall_avg(r.recall_red, r.recall_green, r.recall_blue);
  r.unique_color_count = unique_color_count(generated);
  return r;
}

std::string MetricsReport::to_text() const {
  std::string s;
  s += "Red=" + fmt(recall_red) + "\n";
  s += "Green=" + fmt(recall_green) + "\n";
  s += "Blue=" + fmt(recall_blue) + "\n";
  s += "Recall=" + fmt(recall_avg) + "\n";
  s += "Count=" + std::to_string(unique_color_count) + "\n";
  if (mse) s += "MSE=" + fmt(*mse) + "\n";
  s += "bins=" + std::to_string(n_bins) + "\n";
  return s;
}

MetricsReport MetricsReport::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("metrics report: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(std::string("metrics report: missing key ") + key);
    return it->second;
  };
  MetricsReport r;
  r.recall_red = std::stod(need("Red"));
  r.recall_green = std::stod(need("Green"));
  r.recall_blue = std::stod(need("Blue"));
  r.recall_avg = std::stod(need("Recall"));
  r.unique_color_count = std::stoull(need("Count"));
  r.n_bins = std::stoi(need("bins"));
  if (kv.count("MSE")) r.mse = std::stod(kv["MSE"]);
  return r;
}

std::vector<HistogramRow> histogram_export(std::span<const ImageView> real, std::span<const ImageView> generated,
                                           int n) {
  require_bins(n);
  std::vector<HistogramRow> rows;
  for (auto c : kChannels) {
    const auto f = histogram(real, c, n);
    const auto g = histogram(generated, c, n);
    for (int b = 0; b < n; ++b) {
      auto density = [](std::uint64_t v, std::size_t total) {
        return total ? static_cast<double>(v) / static_cast<double>(total) : 0.0;
      };
      rows.push_back({c, b, f[b], g[b], density(f[b], real.size()), density(g[b], generated.size())});
    }
  }
  return rows;
}

std::string histogram_csv(std::span<const HistogramRow> rows) {
  std::string s = std::string(kHistogramHeader) + "\n";
  for (const auto& r : rows) {
    s += std::string(channel_name(r.channel)) + "," + std::to_string(r.bin) + "," + std::to_string(r.real_freq) + "," +
         std::to_string(r.gen_freq) + "," + fmt(r.real_density) + "," + fmt(r.gen_density) + "\n";
  }
  return s;
}

}  // namespace m21::metrics
