#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tibp {

// Real-valued H x W x C grid stored channel-planar: (c * H + y) * W + x.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  Raster() = default;
  Raster(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return values.size(); }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  double& at(int y, int x, int c) { return values[index(y, x, c)]; }
  double at(int y, int x, int c) const { return values[index(y, x, c)]; }

  std::span<double> channel(int c) {
    return {values.data() + static_cast<std::size_t>(c) * pixel_count(), pixel_count()};
  }
  std::span<const double> channel(int c) const {
    return {values.data() + static_cast<std::size_t>(c) * pixel_count(), pixel_count()};
  }

  bool same_shape(const Raster& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Raster&) const = default;
};

using Image = Raster;
using FeatureCanvas = Raster;

// Binary H x W grid, row-major.
struct BitGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BitGrid() = default;
  BitGrid(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * w, fill) {}

  bool empty() const { return bits.empty(); }
  std::uint8_t& operator[](std::size_t i) { return bits[i]; }
  std::uint8_t operator[](std::size_t i) const { return bits[i]; }
  bool operator==(const BitGrid&) const = default;
};

struct Dataset {
  std::vector<Image> images;
  // Per-channel statistics removed by normalization. Identity (0, 1) when
  // the data were never normalized.
  std::vector<double> channel_mean;
  std::vector<double> channel_stddev;

  int size() const { return static_cast<int>(images.size()); }
  int height() const { return images.empty() ? 0 : images.front().height; }
  int width() const { return images.empty() ? 0 : images.front().width; }
  int channels() const { return images.empty() ? 0 : images.front().channels; }
  bool operator==(const Dataset&) const = default;
};

}  // namespace tibp
