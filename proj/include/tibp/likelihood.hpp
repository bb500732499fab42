#pragma once

#include <vector>

#include "tibp/model.hpp"

namespace tibp {

// Visibility for one image: for each pixel, the index of the uppermost
// unmasked active feature (-1 for background) and the canvas pixel it shows.
// M^d_{n,k} = 1 exactly when owner[d] == k, so at most one feature is visible
// per pixel.
struct VisibilityTensor {
  int height = 0;
  int width = 0;
  std::vector<int> owner;
  std::vector<int> source;

  bool visible(int k, int d) const { return owner[d] == k; }
};

// Pass exclude >= 0 to compute visibility as if that feature were inactive.
VisibilityTensor visibility_indicators(const ModelState& state, int n, int exclude = -1);

// Noise-free mean of image n.
Raster compose_image(const ModelState& state, int n);
// Mean of image n with feature `exclude` removed.
Raster compose_excluding(const ModelState& state, int n, int exclude);

double image_log_likelihood(const Image& x, const Raster& mean, double sigma_x);
double squared_error(const Image& x, const Raster& mean);

// Residual for feature k in image n. k == -1 denotes a candidate feature that
// is not yet instantiated (treated as uppermost in the masked model).
// Masked model: x_n on pixels shown by features behind k. With
// include_unexplained, pixels showing no feature are kept as well.
Raster residual(const ModelState& state, int n, int k, bool include_unexplained = false);

// Sum over images of the image log-likelihoods.
double data_log_likelihood(const ModelState& state);
// Log prior of Z, features, transformations, masks and order under the
// current hyperparameters.
double log_prior(const ModelState& state);
inline double log_joint(const ModelState& state) { return data_log_likelihood(state) + log_prior(state); }

}  // namespace tibp
