#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tibp/image.hpp"
#include "tibp/rng.hpp"
#include "tibp/transform.hpp"

namespace tibp {

enum class Variant {
  ibp_lg,   // linear-Gaussian IBP, every transformation fixed to identity
  lg_tibp,  // transformed features combined by superposition
  m_tibp,   // masked, depth-ordered transformed features
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct Hyperparameters {
  double alpha = 1.0;    // IBP mass
  double beta = 1.0;     // mask Beta(beta, beta) concentration
  double sigma_x = 1.0;  // observation noise std
  double sigma_a = 1.0;  // feature prior std
  // alpha ~ Gamma(alpha_shape, alpha_rate)
  double alpha_shape = 1.0;
  double alpha_rate = 1.0;
  // sigma_x^2 ~ InvGamma(noise_shape, noise_scale), sigma_a^2 likewise
  double noise_shape = 1.0;
  double noise_scale = 1.0;
  double feature_shape = 1.0;
  double feature_scale = 1.0;

  bool operator==(const Hyperparameters&) const = default;
};

// One column of Z together with everything attached to it. Transformations
// and masks are meaningful only where used[n] != 0; unused entries hold the
// identity transformation and an empty mask.
struct Feature {
  int id = 0;
  FeatureCanvas canvas;
  std::vector<double> shape;  // pi, canvas_h * canvas_w (M-tIBP only)
  int rank = 0;               // depth order omega, 1 = furthest back (M-tIBP only)
  std::vector<std::uint8_t> used;
  std::vector<Transformation> transforms;
  std::vector<BitGrid> masks;
  std::uint64_t version = 0;  // bumped whenever canvas values change

  int usage() const;
  bool operator==(const Feature&) const = default;
};

struct ModelState {
  Variant variant = Variant::lg_tibp;
  std::shared_ptr<const Dataset> data;
  TransformationSpace space;
  std::vector<Feature> features;
  Hyperparameters hyper;
  Rng rng;
  std::uint64_t seed = 0;
  int iteration = 0;
  int next_feature_id = 0;

  int num_images() const { return data ? data->size() : 0; }
  int num_features() const { return static_cast<int>(features.size()); }
  bool masked() const { return variant == Variant::m_tibp; }
  bool uses(int n, int k) const { return features[k].used[n] != 0; }
  // m_{-n,k}
  int usage_excluding(int n, int k) const { return features[k].usage() - (uses(n, k) ? 1 : 0); }
  const Image& image(int n) const { return data->images[n]; }

  // Throws tibp::Error describing the first violated invariant.
  void validate() const;

  // Value equality of the latent state (the dataset is compared by content).
  bool same_as(const ModelState& other) const;
};

struct ModelConfig {
  Variant variant = Variant::lg_tibp;
  int canvas_h = 0;  // 0 means image height
  int canvas_w = 0;
  std::vector<double> rotations{0.0};
  std::vector<double> scales{1.0};
  Hyperparameters hyper;
  std::uint64_t seed = 1;
  int warm_start_features = 0;
};

// Per-channel zero-mean, unit-variance (population) normalization over all
// pixels of all images.
Dataset normalize_dataset(const Dataset& raw);
Dataset denormalize_dataset(const Dataset& normalized);
// Applies an existing dataset's statistics to another image (test data).
Image normalize_with(const Image& raw, const Dataset& reference);

TransformationSpace make_space(const ModelConfig& config, int image_h, int image_w);
ModelState init_state(std::shared_ptr<const Dataset> data, const ModelConfig& config);

// Appends a new feature column (all images unused) and returns its index.
int add_feature(ModelState& state, FeatureCanvas canvas);
void prune_empty_features(ModelState& state);

}  // namespace tibp
