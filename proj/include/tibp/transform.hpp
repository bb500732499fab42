#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "tibp/image.hpp"

namespace tibp {

// Translation (dx, dy) in pixels plus indices into the space's rotation and
// scale sets.
struct Transformation {
  int dx = 0;
  int dy = 0;
  int rotation = 0;
  int scale = 0;
  bool operator==(const Transformation&) const = default;
};

// For each pixel of the scaled-then-rotated canvas (row-major, out_h x out_w),
// the row-major index of the source canvas pixel it samples.
struct CanvasMap {
  int height = 0;
  int width = 0;
  std::vector<int> source;
};

CanvasMap rotate_scale_map(int canvas_h, int canvas_w, int quarter_turns, double scale);

// Finite transformation space for a fixed image and canvas size. Canonical
// order is scale-major, then rotation, then row-major over the lag window
// dy in [-h'+1, H-1], dx in [-w'+1, W-1] of the transformed canvas h' x w'.
class TransformationSpace {
 public:
  struct Pair {
    int rotation = 0;  // index into rotations()
    int scale = 0;     // index into scales()
    int quarter_turns = 0;
    CanvasMap map;
    int min_dy = 0, max_dy = 0, min_dx = 0, max_dx = 0;
    int offset = 0;  // canonical index of this pair's first transformation

    int lag_rows() const { return max_dy - min_dy + 1; }
    int lag_cols() const { return max_dx - min_dx + 1; }
    int count() const { return lag_rows() * lag_cols(); }
  };

  TransformationSpace() = default;
  TransformationSpace(int image_h, int image_w, int canvas_h, int canvas_w,
                      std::vector<double> rotations = {0.0}, std::vector<double> scales = {1.0},
                      bool translations = true);

  int image_height() const { return image_h_; }
  int image_width() const { return image_w_; }
  int canvas_height() const { return canvas_h_; }
  int canvas_width() const { return canvas_w_; }
  bool translations() const { return translations_; }
  const std::vector<double>& rotations() const { return rotations_; }
  const std::vector<double>& scales() const { return scales_; }

  int size() const { return total_; }
  const std::vector<Pair>& pairs() const { return pairs_; }
  const Pair& pair_of(const Transformation& t) const {
    return pairs_[static_cast<std::size_t>(t.scale) * rotations_.size() + t.rotation];
  }

  Transformation at(int index) const;
  int index_of(const Transformation& t) const;  // -1 when not a member
  bool contains(const Transformation& t) const { return index_of(t) >= 0; }
  Transformation identity() const { return {0, 0, identity_rotation_, identity_scale_}; }

  // Largest transformed canvas extent over all pairs.
  int max_transformed_height() const;
  int max_transformed_width() const;

  bool operator==(const TransformationSpace& o) const {
    return image_h_ == o.image_h_ && image_w_ == o.image_w_ && canvas_h_ == o.canvas_h_ &&
           canvas_w_ == o.canvas_w_ && rotations_ == o.rotations_ && scales_ == o.scales_ &&
           translations_ == o.translations_;
  }

 private:
  int image_h_ = 0, image_w_ = 0, canvas_h_ = 0, canvas_w_ = 0;
  std::vector<double> rotations_;
  std::vector<double> scales_;
  bool translations_ = true;
  std::vector<Pair> pairs_;
  int total_ = 0;
  int identity_rotation_ = 0, identity_scale_ = 0;
};

std::vector<Transformation> enumerate_transformations(const TransformationSpace& space);

// Exact quarter-turn rotation (angle must be a multiple of pi/2) applied after
// nearest-neighbour scaling to round(s*h) x round(s*w).
FeatureCanvas rotate_scale_canvas(const FeatureCanvas& canvas, double rotation, double scale);

struct RenderedFeature {
  Raster values;
  BitGrid support;
};

RenderedFeature render_feature(const FeatureCanvas& canvas, const Transformation& t,
                               const TransformationSpace& space);

// Canvas pixel (row-major index) whose render lands on image pixel (y, x), or
// nullopt when (y, x) lies outside the transformed footprint.
std::optional<int> inverse_pixel_map(const TransformationSpace& space, const Transformation& t,
                                     int y, int x);

// Calls fn(image_pixel, canvas_pixel) for every transformed-canvas pixel that
// lands inside the image frame. Both indices are row-major within one channel.
template <typename Fn>
void for_each_landing(const TransformationSpace& space, const Transformation& t, Fn&& fn) {
  const auto& pair = space.pair_of(t);
  const int H = space.image_height();
  const int W = space.image_width();
  const int y0 = std::max(0, -t.dy);
  const int y1 = std::min(pair.map.height, H - t.dy);
  const int x0 = std::max(0, -t.dx);
  const int x1 = std::min(pair.map.width, W - t.dx);
  for (int i = y0; i < y1; ++i) {
    const int row = (i + t.dy) * W + t.dx;
    const int* src = pair.map.source.data() + static_cast<std::size_t>(i) * pair.map.width;
    for (int j = x0; j < x1; ++j) fn(row + j, src[j]);
  }
}

}  // namespace tibp
