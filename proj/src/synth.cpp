#include "tibp/synth.hpp"

#include <algorithm>

#include "tibp/error.hpp"

namespace tibp {

std::string to_string(Composition c) { return c == Composition::additive ? "additive" : "occluding"; }

Composition parse_composition(const std::string& s) {
  if (s == "additive") return Composition::additive;
  if (s == "occluding") return Composition::occluding;
  fail(ErrorKind::usage, "unknown composition mode '" + s + "'");
}

Glyph make_glyph(const std::string& name, const std::vector<std::string>& rows,
                 std::array<double, 3> color) {
  const int h = static_cast<int>(rows.size());
  const int w = h ? static_cast<int>(rows.front().size()) : 0;
  if (h == 0 || w == 0) fail(ErrorKind::dimension, "glyph '" + name + "' is empty");
  Glyph g{name, FeatureCanvas(h, w, 3), BitGrid(h, w), color};
  for (int y = 0; y < h; ++y) {
    if (static_cast<int>(rows[y].size()) != w) fail(ErrorKind::dimension, "ragged glyph rows");
    for (int x = 0; x < w; ++x) {
      if (rows[y][x] == '.') continue;
      g.stencil[static_cast<std::size_t>(y) * w + x] = 1;
      for (int c = 0; c < 3; ++c) g.canvas.at(y, x, c) = color[c];
    }
  }
  return g;
}

std::vector<Glyph> builtin_glyphs() {
  return {
      make_glyph("v", {"#...#", "#...#", ".#.#.", ".#.#.", "..#.."}, {1.0, 0.0, 0.0}),
      make_glyph("T", {"#####", "..#..", "..#..", "..#..", "..#.."}, {0.0, 1.0, 0.0}),
      make_glyph("U", {"#...#", "#...#", "#...#", "#...#", ".###."}, {0.0, 0.0, 1.0}),
      make_glyph("x", {"#...#", ".#.#.", "..#..", ".#.#.", "#...#"}, {1.0, 1.0, 0.0}),
  };
}

Image render_truth(const GroundTruth& truth, int n) {
  const auto& space = truth.space;
  const int C = truth.features.empty() ? 3 : truth.features.front().canvas.channels;
  Image img(space.image_height(), space.image_width(), C);
  const std::size_t plane = img.pixel_count();
  std::vector<int> order(truth.features.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
  if (truth.mode == Composition::occluding) {
    std::sort(order.begin(), order.end(), [&](int a, int b) { return truth.rank[a] < truth.rank[b]; });
  }
  for (int k : order) {
    if (!truth.z[n][k]) continue;
    const Glyph& g = truth.features[k];
    const std::size_t cplane = g.canvas.pixel_count();
    for_each_landing(space, truth.transforms[n][k], [&](int e, int src) {
      if (truth.mode == Composition::occluding) {
        if (!g.stencil[src]) return;
        for (int c = 0; c < C; ++c) img.values[c * plane + e] = g.canvas.values[c * cplane + src];
      } else {
        for (int c = 0; c < C; ++c) img.values[c * plane + e] += g.canvas.values[c * cplane + src];
      }
    });
  }
  return img;
}

std::pair<Dataset, GroundTruth> generate_synthetic_dataset(const SynthSpec& spec, Rng& rng) {
  if (spec.n_images < 1) fail(ErrorKind::usage, "n_images must be positive");
  if (!(spec.include_prob >= 0.0 && spec.include_prob <= 1.0)) {
    fail(ErrorKind::usage, "include_prob must lie in [0, 1]");
  }
  if (spec.noise < 0.0) fail(ErrorKind::usage, "noise must be non-negative");
  GroundTruth truth;
  truth.features = spec.glyphs.empty() ? builtin_glyphs() : spec.glyphs;
  const auto& first = truth.features.front().canvas;
  for (const auto& g : truth.features) {
    if (g.canvas.height != first.height || g.canvas.width != first.width ||
        g.canvas.channels != first.channels) {
      fail(ErrorKind::dimension, "glyphs must share one canvas size");
    }
  }
  if (first.height > spec.height || first.width > spec.width) {
    fail(ErrorKind::dimension, "glyph larger than the image");
  }
  truth.space = TransformationSpace(spec.height, spec.width, first.height, first.width,
                                    spec.rotations, spec.scales, spec.translations);
  truth.mode = spec.mode;
  truth.noise = spec.noise;
  const int K = truth.num_features();

  // Random global depth order: a shuffled permutation of 1..K.
  truth.rank.resize(K);
  for (int k = 0; k < K; ++k) truth.rank[k] = k + 1;
  for (int k = K - 1; k > 0; --k) std::swap(truth.rank[k], truth.rank[rng.uniform_int(0, k)]);

  Dataset data;
  const Transformation id = truth.space.identity();
  for (int n = 0; n < spec.n_images; ++n) {
    std::vector<std::uint8_t> zn(K, 0);
    std::vector<Transformation> rn(K, id);
    for (int k = 0; k < K; ++k) {
      if (!rng.bernoulli(spec.include_prob)) continue;
      zn[k] = 1;
      rn[k] = truth.space.at(rng.uniform_int(0, truth.space.size() - 1));
    }
    truth.z.push_back(std::move(zn));
    truth.transforms.push_back(std::move(rn));
    Image img = render_truth(truth, n);
    if (spec.noise > 0.0) {
      for (double& v : img.values) v += rng.normal(0.0, spec.noise);
    }
    data.images.push_back(std::move(img));
  }
  data.channel_mean.assign(first.channels, 0.0);
  data.channel_stddev.assign(first.channels, 1.0);
  return {std::move(data), std::move(truth)};
}

}  // namespace tibp
