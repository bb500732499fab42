#include "tibp/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "tibp/error.hpp"

namespace tibp {

namespace {

std::vector<int> active_by_rank(const ModelState& state, int n, int exclude) {
  std::vector<int> ks;
  for (int k = 0; k < state.num_features(); ++k) {
    if (k != exclude && state.uses(n, k)) ks.push_back(k);
  }
  std::sort(ks.begin(), ks.end(),
            [&](int a, int b) { return state.features[a].rank < state.features[b].rank; });
  return ks;
}

void add_rendered(const ModelState& state, int n, int k, Raster& mean) {
  const Feature& f = state.features[k];
  const std::size_t plane = mean.pixel_count();
  const std::size_t cplane = f.canvas.pixel_count();
  const int C = mean.channels;
  for_each_landing(state.space, f.transforms[n], [&](int d, int src) {
    for (int c = 0; c < C; ++c) mean.values[c * plane + d] += f.canvas.values[c * cplane + src];
  });
}

Raster compose_impl(const ModelState& state, int n, int exclude) {
  const Image& x = state.image(n);
  Raster mean(x.height, x.width, x.channels);
  if (!state.masked()) {
    for (int k = 0; k < state.num_features(); ++k) {
      if (k != exclude && state.uses(n, k)) add_rendered(state, n, k, mean);
    }
    return mean;
  }
  const VisibilityTensor vis = visibility_indicators(state, n, exclude);
  const std::size_t plane = mean.pixel_count();
  for (std::size_t d = 0; d < plane; ++d) {
    const int k = vis.owner[d];
    if (k < 0) continue;
    const auto& canvas = state.features[k].canvas;
    for (int c = 0; c < mean.channels; ++c) {
      mean.values[c * plane + d] = canvas.values[c * canvas.pixel_count() + vis.source[d]];
    }
  }
  return mean;
}

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

}  // namespace

VisibilityTensor visibility_indicators(const ModelState& state, int n, int exclude) {
  if (!state.masked()) fail(ErrorKind::variant, "visibility is defined for the masked model only");
  const int H = state.space.image_height(), W = state.space.image_width();
  VisibilityTensor vis{H, W, std::vector<int>(static_cast<std::size_t>(H) * W, -1),
                       std::vector<int>(static_cast<std::size_t>(H) * W, -1)};
  // Painter's order: later (higher rank) features overwrite earlier ones.
  for (int k : active_by_rank(state, n, exclude)) {
    const Feature& f = state.features[k];
    const BitGrid& mask = f.masks[n];
    for_each_landing(state.space, f.transforms[n], [&](int d, int src) {
      if (mask[src]) {
        vis.owner[d] = k;
        vis.source[d] = src;
      }
    });
  }
  return vis;
}

Raster compose_image(const ModelState& state, int n) { return compose_impl(state, n, -1); }

Raster compose_excluding(const ModelState& state, int n, int exclude) {
  return compose_impl(state, n, exclude);
}

double squared_error(const Image& x, const Raster& mean) {
  if (!x.same_shape(mean)) fail(ErrorKind::dimension, "image and mean differ in shape");
  double ss = 0.0;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double e = x.values[i] - mean.values[i];
    ss += e * e;
  }
  return ss;
}

double image_log_likelihood(const Image& x, const Raster& mean, double sigma_x) {
  if (!(sigma_x > 0.0)) fail(ErrorKind::numeric, "sigma_x must be positive");
  const double n = static_cast<double>(x.values.size());
  const double var = sigma_x * sigma_x;
  return -0.5 * n * std::log(2.0 * std::numbers::pi * var) - squared_error(x, mean) / (2.0 * var);
}

Raster residual(const ModelState& state, int n, int k, bool include_unexplained) {
  const Image& x = state.image(n);
  if (!state.masked()) {
    Raster r = x;
    const Raster others = compose_impl(state, n, k);
    for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] -= others.values[i];
    return r;
  }
  if (k < 0) return x;
  const VisibilityTensor vis = visibility_indicators(state, n, k);
  const int rank = state.features[k].rank;
  Raster r(x.height, x.width, x.channels);
  const std::size_t plane = r.pixel_count();
  for (std::size_t d = 0; d < plane; ++d) {
    const int j = vis.owner[d];
    const bool keep = j < 0 ? include_unexplained : state.features[j].rank < rank;
    if (!keep) continue;
    for (int c = 0; c < r.channels; ++c) r.values[c * plane + d] = x.values[c * plane + d];
  }
  return r;
}

double data_log_likelihood(const ModelState& state) {
  double ll = 0.0;
  for (int n = 0; n < state.num_images(); ++n) {
    ll += image_log_likelihood(state.image(n), compose_image(state, n), state.hyper.sigma_x);
  }
  return ll;
}

double log_prior(const ModelState& state) {
  const auto& h = state.hyper;
  const int N = state.num_images();
  const int K = state.num_features();
  double lp = 0.0;

  double harmonic = 0.0;
  for (int i = 1; i <= N; ++i) harmonic += 1.0 / i;
  lp += K * std::log(h.alpha) - h.alpha * harmonic;
  std::map<std::vector<std::uint8_t>, int> histories;
  for (const auto& f : state.features) {
    const int m = f.usage();
    if (m > 0) {
      lp += std::lgamma(N - m + 1.0) + std::lgamma(static_cast<double>(m)) - std::lgamma(N + 1.0);
    }
    ++histories[f.used];
  }
  for (const auto& [_, count] : histories) lp -= std::lgamma(count + 1.0);

  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * h.sigma_a * h.sigma_a);
  const double log_t = std::log(static_cast<double>(state.space.size()));
  for (const auto& f : state.features) {
    for (double a : f.canvas.values) lp += log_norm - a * a / (2.0 * h.sigma_a * h.sigma_a);
    const int m = f.usage();
    lp -= m * log_t;
    if (state.masked()) {
      for (std::size_t d = 0; d < f.canvas.pixel_count(); ++d) {
        int on = 0;
        for (int n = 0; n < N; ++n) {
          if (f.used[n] && f.masks[n][d]) ++on;
        }
        lp += log_beta_fn(h.beta + on, h.beta + m - on) - log_beta_fn(h.beta, h.beta);
      }
    }
  }
  if (state.masked()) lp -= std::lgamma(K + 1.0);
  return lp;
}

}  // namespace tibp
