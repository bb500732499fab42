#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "tibp/image.hpp"
#include "tibp/rng.hpp"
#include "tibp/transform.hpp"

namespace tibp {

enum class Composition { additive, occluding };

std::string to_string(Composition c);
Composition parse_composition(const std::string& s);

// A feature to plant: colored values over a binary stencil. Values are zero
// wherever the stencil is off.
struct Glyph {
  std::string name;
  FeatureCanvas canvas;
  BitGrid stencil;
  std::array<double, 3> color{};
};

// The built-in 5x5 'v', 'T', 'U', 'x' glyphs in red, green, blue and yellow.
std::vector<Glyph> builtin_glyphs();
Glyph make_glyph(const std::string& name, const std::vector<std::string>& rows,
                 std::array<double, 3> color);

struct SynthSpec {
  int n_images = 100;
  int height = 9;
  int width = 9;
  Composition mode = Composition::occluding;
  double include_prob = 0.5;
  double noise = 0.0;
  std::vector<double> rotations{0.0};
  std::vector<double> scales{1.0};
  bool translations = true;  // false keeps every glyph at offset (0, 0)
  std::vector<Glyph> glyphs;  // empty selects builtin_glyphs()
};

struct GroundTruth {
  std::vector<Glyph> features;
  std::vector<std::vector<std::uint8_t>> z;              // N x K
  std::vector<std::vector<Transformation>> transforms;  // N x K, identity where z = 0
  std::vector<int> rank;  // 1 = back; meaningful in occluding mode
  Composition mode = Composition::additive;
  double noise = 0.0;
  TransformationSpace space;

  int num_images() const { return static_cast<int>(z.size()); }
  int num_features() const { return static_cast<int>(features.size()); }
};

// Noise-free image n under the ground truth's composition rule.
Image render_truth(const GroundTruth& truth, int n);

std::pair<Dataset, GroundTruth> generate_synthetic_dataset(const SynthSpec& spec, Rng& rng);

}  // namespace tibp
