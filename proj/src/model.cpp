#include "tibp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tibp/error.hpp"

namespace tibp {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ibp_lg: return "ibp-lg";
    case Variant::lg_tibp: return "lg-tibp";
    case Variant::m_tibp: return "m-tibp";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "ibp-lg" || s == "ibp") return Variant::ibp_lg;
  if (s == "lg-tibp" || s == "lg") return Variant::lg_tibp;
  if (s == "m-tibp" || s == "m") return Variant::m_tibp;
  fail(ErrorKind::usage, "unknown variant '" + s + "'");
}

int Feature::usage() const {
  return static_cast<int>(std::count_if(used.begin(), used.end(), [](auto u) { return u != 0; }));
}

Dataset normalize_dataset(const Dataset& raw) {
  if (raw.images.empty()) fail(ErrorKind::data, "dataset is empty");
  const Image& first = raw.images.front();
  for (const auto& img : raw.images) {
    if (!img.same_shape(first)) fail(ErrorKind::dimension, "images differ in shape");
  }
  const int C = first.channels;
  const double count = static_cast<double>(first.pixel_count()) * raw.images.size();
  std::vector<double> mean(C, 0.0), sd(C, 0.0);
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (const auto& img : raw.images) {
      for (double v : img.channel(c)) {
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite pixel value");
        sum += v;
      }
    }
    mean[c] = sum / count;
    double ss = 0.0;
    for (const auto& img : raw.images) {
      for (double v : img.channel(c)) ss += (v - mean[c]) * (v - mean[c]);
    }
    sd[c] = std::sqrt(ss / count);
    if (!(sd[c] > 0.0)) {
      fail(ErrorKind::degenerate_variance, "channel " + std::to_string(c) + " has zero variance");
    }
  }
  Dataset out;
  out.images = raw.images;
  for (auto& img : out.images) {
    for (int c = 0; c < C; ++c) {
      for (double& v : img.channel(c)) v = (v - mean[c]) / sd[c];
    }
  }
  out.channel_mean.resize(C);
  out.channel_stddev.resize(C);
  for (int c = 0; c < C; ++c) {
    const double m0 = raw.channel_mean.size() == static_cast<std::size_t>(C) ? raw.channel_mean[c] : 0.0;
    const double s0 = raw.channel_stddev.size() == static_cast<std::size_t>(C) ? raw.channel_stddev[c] : 1.0;
    out.channel_mean[c] = m0 + s0 * mean[c];
    out.channel_stddev[c] = s0 * sd[c];
  }
  return out;
}

Dataset denormalize_dataset(const Dataset& normalized) {
  Dataset out;
  out.images = normalized.images;
  if (normalized.channel_mean.empty()) return out;
  for (auto& img : out.images) {
    for (int c = 0; c < img.channels; ++c) {
      for (double& v : img.channel(c)) v = v * normalized.channel_stddev[c] + normalized.channel_mean[c];
    }
  }
  return out;
}

Image normalize_with(const Image& raw, const Dataset& reference) {
  Image out = raw;
  if (reference.channel_mean.empty()) return out;
  if (static_cast<int>(reference.channel_mean.size()) != raw.channels) {
    fail(ErrorKind::dimension, "channel count differs from the reference dataset");
  }
  for (int c = 0; c < raw.channels; ++c) {
    for (double& v : out.channel(c)) v = (v - reference.channel_mean[c]) / reference.channel_stddev[c];
  }
  return out;
}

TransformationSpace make_space(const ModelConfig& config, int image_h, int image_w) {
  if (config.variant == Variant::ibp_lg) {
    if ((config.canvas_h != 0 && config.canvas_h != image_h) ||
        (config.canvas_w != 0 && config.canvas_w != image_w)) {
      fail(ErrorKind::dimension, "the IBP-LG baseline uses full-image features");
    }
    return TransformationSpace(image_h, image_w, image_h, image_w, {0.0}, {1.0}, false);
  }
  const int fh = config.canvas_h == 0 ? image_h : config.canvas_h;
  const int fw = config.canvas_w == 0 ? image_w : config.canvas_w;
  return TransformationSpace(image_h, image_w, fh, fw, config.rotations, config.scales, true);
}

namespace {

double sample_beta(Rng& rng, double a, double b) {
  const double x = rng.gamma(a, 1.0);
  const double y = rng.gamma(b, 1.0);
  return x / (x + y);
}

}  // namespace

int add_feature(ModelState& state, FeatureCanvas canvas) {
  const int N = state.num_images();
  Feature f;
  f.id = state.next_feature_id++;
  f.canvas = std::move(canvas);
  f.used.assign(N, 0);
  f.transforms.assign(N, state.space.identity());
  f.masks.assign(N, BitGrid());
  if (state.masked()) {
    f.shape.assign(f.canvas.pixel_count(), 0.5);
    f.rank = state.num_features() + 1;
  }
  state.features.push_back(std::move(f));
  return state.num_features() - 1;
}

ModelState init_state(std::shared_ptr<const Dataset> data, const ModelConfig& config) {
  if (!data || data->size() == 0) fail(ErrorKind::data, "dataset is empty");
  ModelState s;
  s.variant = config.variant;
  s.data = std::move(data);
  s.space = make_space(config, s.data->height(), s.data->width());
  s.hyper = config.hyper;
  s.seed = config.seed;
  s.rng = Rng(config.seed);
  const int C = s.data->channels();
  for (int k = 0; k < config.warm_start_features; ++k) {
    FeatureCanvas canvas(s.space.canvas_height(), s.space.canvas_width(), C);
    for (double& v : canvas.values) v = s.rng.normal(0.0, s.hyper.sigma_a);
    const int idx = add_feature(s, std::move(canvas));
    if (s.masked()) {
      for (double& p : s.features[idx].shape) p = sample_beta(s.rng, s.hyper.beta, s.hyper.beta);
    }
  }
  s.validate();
  return s;
}

void prune_empty_features(ModelState& state) {
  std::erase_if(state.features, [](const Feature& f) { return f.usage() == 0; });
  if (!state.masked()) return;
  std::vector<int> order(state.features.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return state.features[a].rank < state.features[b].rank; });
  for (std::size_t r = 0; r < order.size(); ++r) state.features[order[r]].rank = static_cast<int>(r) + 1;
}

void ModelState::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::precondition, "invalid state: " + what); };
  if (!data || data->size() == 0) bad("no dataset attached");
  const int N = num_images();
  const int H = data->height(), W = data->width(), C = data->channels();
  for (const auto& img : data->images) {
    if (img.height != H || img.width != W || img.channels != C) bad("dataset not homogeneous");
  }
  if (space.image_height() != H || space.image_width() != W) bad("space does not match images");
  const auto& h = hyper;
  for (double v : {h.alpha, h.beta, h.sigma_x, h.sigma_a, h.alpha_shape, h.alpha_rate, h.noise_shape,
                   h.noise_scale, h.feature_shape, h.feature_scale}) {
    if (!(v > 0.0) || !std::isfinite(v)) bad("hyperparameters must be positive and finite");
  }
  if (variant == Variant::ibp_lg && space.size() != 1) bad("IBP-LG requires the identity-only space");
  std::vector<int> ranks;
  std::vector<int> ids;
  for (const auto& f : features) {
    if (f.canvas.height != space.canvas_height() || f.canvas.width != space.canvas_width() ||
        f.canvas.channels != C) {
      bad("feature canvas has wrong shape");
    }
    for (double v : f.canvas.values) {
      if (!std::isfinite(v)) bad("non-finite feature value");
    }
    if (static_cast<int>(f.used.size()) != N || static_cast<int>(f.transforms.size()) != N ||
        static_cast<int>(f.masks.size()) != N) {
      bad("feature column length differs from N");
    }
    ids.push_back(f.id);
    if (masked()) {
      if (f.shape.size() != f.canvas.pixel_count()) bad("shape probabilities missing");
      for (double p : f.shape) {
        if (!(p > 0.0 && p < 1.0)) bad("shape probability outside (0, 1)");
      }
      ranks.push_back(f.rank);
    } else if (!f.shape.empty()) {
      bad("shape probabilities present in an unmasked variant");
    }
    for (int n = 0; n < N; ++n) {
      if (f.used[n] > 1) bad("Z entry not binary");
      if (f.used[n]) {
        if (!space.contains(f.transforms[n])) bad("transformation outside the space");
        if (masked()) {
          const auto& m = f.masks[n];
          if (m.height != f.canvas.height || m.width != f.canvas.width) bad("mask has wrong shape");
          for (auto b : m.bits) {
            if (b > 1) bad("mask entry not binary");
          }
        } else if (!f.masks[n].empty()) {
          bad("mask present in an unmasked variant");
        }
      } else {
        if (!(f.transforms[n] == space.identity())) bad("transformation set for an unused entry");
        if (!f.masks[n].empty()) bad("mask set for an unused entry");
      }
    }
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) bad("duplicate feature ids");
  if (masked()) {
    std::sort(ranks.begin(), ranks.end());
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      if (ranks[i] != static_cast<int>(i) + 1) bad("feature order is not a permutation");
    }
  }
}

bool ModelState::same_as(const ModelState& o) const {
  const bool data_equal = (data == o.data) || (data && o.data && *data == *o.data);
  return variant == o.variant && data_equal && space == o.space && features == o.features &&
         hyper == o.hyper && rng == o.rng && seed == o.seed && iteration == o.iteration &&
         next_feature_id == o.next_feature_id;
}

}  // namespace tibp
