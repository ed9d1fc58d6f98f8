// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m21/cmnist.hpp"
#include "m21/tensor.hpp"

// Color Recall, Unique Color Count and MSE over RGB byte images. An image is
// any HWC byte buffer whose length is a multiple of 3.
namespace m21::metrics {

enum class Channel { Red = 0, Green = 1, Blue = 2 };
inline constexpr Channel kChannels[] = {Channel::Red, Channel::Green, Channel::Blue};
const char* channel_name(Channel c);

using ImageView = std::span<const std::uint8_t>;

std::vector<ImageView> color_views(const cmnist::PairedDataset& ds);

struct ChannelHistogram {
  Channel channel;
  int n;
  std::vector<std::uint64_t> freq;  // sums to the dataset size
};

struct MetricsReport {
  double recall_red = 0, recall_green = 0, recall_blue = 0, recall_avg = 0;
  std::uint64_t unique_color_count = 0;
  std::optional<double> mse;
  int n_bins = 8;

  /// `key=value` lines using the result-table column names.
  std::string to_text() const;
  static MetricsReport from_text(const std::string& text);
};

std::uint8_t max_channel_value(ImageView image, Channel c);

/// min(floor(p·n/256), n−1): n equal-width bins over the byte range.
int bin_index(std::uint8_t p, int n);

ChannelHistogram channel_frequencies(std::span<const ImageView> images, Channel c, int n);

/// Mean over bins b with F[b] > 0 of min(G[b]/F[b], 1), where F and G are the
/// real and generated histograms of per-image channel maxima.
double color_recall(std::span<const ImageView> real, std::span<const ImageView> generated, Channel c, int n);

double recall_avg(double red, double green, double blue);

/// Distinct RGB triples of each image's peak pixel: the pixel with the
/// largest max-channel value, ties to the smaller channel sum, then to the
/// first in row-major order.
std::uint64_t unique_color_count(std::span<const ImageView> images);
std::array<std::uint8_t, 3> peak_pixel(ImageView image);

/// Mean squared difference over every element of every pair (model space).
double mse(const Tensor& generated, const Tensor& target);
double mse(std::span<const std::pair<Tensor, Tensor>> pairs);

/// Recall for all three channels, their mean and the unique color count of `generated`.
MetricsReport color_report(std::span<const ImageView> real, std::span<const ImageView> generated, int n);

struct HistogramRow {
  Channel channel;
  int bin;
  std::uint64_t real_freq, gen_freq;
  double real_density, gen_density;
};

std::vector<HistogramRow> histogram_export(std::span<const ImageView> real, std::span<const ImageView> generated,
                                           int n);
inline constexpr const char* kHistogramHeader = "channel,bin,real_freq,gen_freq,real_density,gen_density";
std::string histogram_csv(std::span<const HistogramRow> rows);

}  // namespace m21::metrics
