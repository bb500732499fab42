#pragma once

#include <memory>
#include <vector>

#include "tibp/image.hpp"
#include "tibp/model.hpp"

namespace th {

inline tibp::Raster row(std::vector<double> v) {
  tibp::Raster r(1, static_cast<int>(v.size()), 1);
  r.values = std::move(v);
  return r;
}

inline tibp::Raster grid(int h, int w, std::vector<double> v, int c = 1) {
  tibp::Raster r(h, w, c);
  r.values = std::move(v);
  return r;
}

inline std::shared_ptr<const tibp::Dataset> dataset(std::vector<tibp::Image> images) {
  auto d = std::make_shared<tibp::Dataset>();
  const int C = images.empty() ? 1 : images.front().channels;
  d->images = std::move(images);
  d->channel_mean.assign(C, 0.0);
  d->channel_stddev.assign(C, 1.0);
  return d;
}

}  // namespace th
