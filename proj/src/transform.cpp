#include "tibp/transform.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "tibp/error.hpp"

namespace tibp {

namespace {

int quarter_turns_of(double angle) {
  const double q = angle / (std::numbers::pi / 2.0);
  const double r = std::round(q);
  if (std::abs(q - r) > 1e-9) {
    fail(ErrorKind::dimension, "rotation angle " + std::to_string(angle) +
                                   " is not a multiple of pi/2");
  }
  return static_cast<int>(((static_cast<long>(r) % 4) + 4) % 4);
}

int scaled_extent(int n, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    fail(ErrorKind::dimension, "scale must be a positive finite number");
  }
  return std::max(1, static_cast<int>(std::lround(scale * n)));
}

// Nearest source index for pixel-centre sampling; ties resolve toward the
// lower index.
int nearest_source(int i, double scale, int n) {
  const int src = static_cast<int>(std::ceil((i + 0.5) / scale - 1.0));
  return std::clamp(src, 0, n - 1);
}

}  // namespace

CanvasMap rotate_scale_map(int canvas_h, int canvas_w, int quarter_turns, double scale) {
  CanvasMap m;
  m.height = scaled_extent(canvas_h, scale);
  m.width = scaled_extent(canvas_w, scale);
  m.source.resize(static_cast<std::size_t>(m.height) * m.width);
  for (int i = 0; i < m.height; ++i) {
    const int sy = nearest_source(i, scale, canvas_h);
    for (int j = 0; j < m.width; ++j) {
      m.source[static_cast<std::size_t>(i) * m.width + j] = sy * canvas_w + nearest_source(j, scale, canvas_w);
    }
  }
  // One quarter turn: out(i, j) = in(h - 1 - j, i), out is w x h.
  for (int q = 0; q < ((quarter_turns % 4) + 4) % 4; ++q) {
    CanvasMap r;
    r.height = m.width;
    r.width = m.height;
    r.source.resize(m.source.size());
    for (int i = 0; i < r.height; ++i) {
      for (int j = 0; j < r.width; ++j) {
        r.source[static_cast<std::size_t>(i) * r.width + j] =
            m.source[static_cast<std::size_t>(m.height - 1 - j) * m.width + i];
      }
    }
    m = std::move(r);
  }
  return m;
}

TransformationSpace::TransformationSpace(int image_h, int image_w, int canvas_h, int canvas_w,
                                         std::vector<double> rotations,
                                         std::vector<double> scales, bool translations)
    : image_h_(image_h),
      image_w_(image_w),
      canvas_h_(canvas_h),
      canvas_w_(canvas_w),
      rotations_(std::move(rotations)),
      scales_(std::move(scales)),
      translations_(translations) {
  if (image_h <= 0 || image_w <= 0 || canvas_h <= 0 || canvas_w <= 0) {
    fail(ErrorKind::dimension, "image and canvas dimensions must be positive");
  }
  if (canvas_h > image_h || canvas_w > image_w) {
    fail(ErrorKind::dimension, "feature canvas larger than the image");
  }
  if (rotations_.empty() || scales_.empty()) {
    fail(ErrorKind::dimension, "rotation and scale sets must be non-empty");
  }
  int id_rot = -1, id_scale = -1;
  for (std::size_t r = 0; r < rotations_.size(); ++r) {
    if (quarter_turns_of(rotations_[r]) == 0 && id_rot < 0) id_rot = static_cast<int>(r);
  }
  for (std::size_t s = 0; s < scales_.size(); ++s) {
    if (scales_[s] == 1.0 && id_scale < 0) id_scale = static_cast<int>(s);
  }
  if (id_rot < 0 || id_scale < 0) {
    fail(ErrorKind::dimension, "transformation space must contain rotation 0 and scale 1");
  }
  identity_rotation_ = id_rot;
  identity_scale_ = id_scale;

  int offset = 0;
  for (std::size_t s = 0; s < scales_.size(); ++s) {
    for (std::size_t r = 0; r < rotations_.size(); ++r) {
      Pair p;
      p.rotation = static_cast<int>(r);
      p.scale = static_cast<int>(s);
      p.quarter_turns = quarter_turns_of(rotations_[r]);
      p.map = rotate_scale_map(canvas_h, canvas_w, p.quarter_turns, scales_[s]);
      if (p.map.height > image_h || p.map.width > image_w) {
        fail(ErrorKind::dimension, "rotated/scaled canvas " + std::to_string(p.map.height) + "x" +
                                       std::to_string(p.map.width) + " exceeds the image");
      }
      if (translations_) {
        p.min_dy = -p.map.height + 1;
        p.max_dy = image_h - 1;
        p.min_dx = -p.map.width + 1;
        p.max_dx = image_w - 1;
      }
      p.offset = offset;
      offset += p.count();
      pairs_.push_back(std::move(p));
    }
  }
  total_ = offset;
}

Transformation TransformationSpace::at(int index) const {
  if (index < 0 || index >= total_) fail(ErrorKind::dimension, "transformation index out of range");
  auto it = std::upper_bound(pairs_.begin(), pairs_.end(), index,
                             [](int i, const Pair& p) { return i < p.offset; });
  const Pair& p = *(it - 1);
  const int local = index - p.offset;
  return {p.min_dx + local % p.lag_cols(), p.min_dy + local / p.lag_cols(), p.rotation, p.scale};
}

int TransformationSpace::index_of(const Transformation& t) const {
  if (t.rotation < 0 || t.rotation >= static_cast<int>(rotations_.size()) || t.scale < 0 ||
      t.scale >= static_cast<int>(scales_.size())) {
    return -1;
  }
  const Pair& p = pair_of(t);
  if (t.dy < p.min_dy || t.dy > p.max_dy || t.dx < p.min_dx || t.dx > p.max_dx) return -1;
  return p.offset + (t.dy - p.min_dy) * p.lag_cols() + (t.dx - p.min_dx);
}

int TransformationSpace::max_transformed_height() const {
  int h = 0;
  for (const auto& p : pairs_) h = std::max(h, p.map.height);
  return h;
}

int TransformationSpace::max_transformed_width() const {
  int w = 0;
  for (const auto& p : pairs_) w = std::max(w, p.map.width);
  return w;
}

std::vector<Transformation> enumerate_transformations(const TransformationSpace& space) {
  std::vector<Transformation> out;
  out.reserve(static_cast<std::size_t>(space.size()));
  for (const auto& p : space.pairs()) {
    for (int dy = p.min_dy; dy <= p.max_dy; ++dy) {
      for (int dx = p.min_dx; dx <= p.max_dx; ++dx) out.push_back({dx, dy, p.rotation, p.scale});
    }
  }
  return out;
}

FeatureCanvas rotate_scale_canvas(const FeatureCanvas& canvas, double rotation, double scale) {
  const CanvasMap m =
      rotate_scale_map(canvas.height, canvas.width, quarter_turns_of(rotation), scale);
  FeatureCanvas out(m.height, m.width, canvas.channels);
  const std::size_t plane = canvas.pixel_count();
  for (int c = 0; c < canvas.channels; ++c) {
    const double* src = canvas.values.data() + c * plane;
    double* dst = out.values.data() + c * out.pixel_count();
    for (std::size_t p = 0; p < m.source.size(); ++p) dst[p] = src[m.source[p]];
  }
  return out;
}

RenderedFeature render_feature(const FeatureCanvas& canvas, const Transformation& t,
                               const TransformationSpace& space) {
  if (!space.contains(t)) fail(ErrorKind::dimension, "transformation not in space");
  const int H = space.image_height();
  const int W = space.image_width();
  RenderedFeature out{Raster(H, W, canvas.channels), BitGrid(H, W)};
  const std::size_t plane = out.values.pixel_count();
  const std::size_t cplane = canvas.pixel_count();
  for_each_landing(space, t, [&](int d, int src) {
    out.support[d] = 1;
    for (int c = 0; c < canvas.channels; ++c) {
      out.values.values[c * plane + d] = canvas.values[c * cplane + src];
    }
  });
  return out;
}

std::optional<int> inverse_pixel_map(const TransformationSpace& space, const Transformation& t,
                                     int y, int x) {
  const auto& p = space.pair_of(t);
  if (y < 0 || x < 0 || y >= space.image_height() || x >= space.image_width()) return std::nullopt;
  const int i = y - t.dy;
  const int j = x - t.dx;
  if (i < 0 || j < 0 || i >= p.map.height || j >= p.map.width) return std::nullopt;
  return p.map.source[static_cast<std::size_t>(i) * p.map.width + j];
}

}  // namespace tibp
