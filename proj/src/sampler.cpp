#include "tibp/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "tibp/error.hpp"

namespace tibp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double log_normal_density(double v, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - (v - mean) * (v - mean) / (2.0 * var);
}

double log_bernoulli(bool bit, double p) {
  const double q = bit ? p : 1.0 - p;
  return q > 0.0 ? std::log(q) : -std::numeric_limits<double>::infinity();
}

double log_sum_exp(const std::vector<double>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

bool accept(double log_ratio, Rng& rng) {
  if (log_ratio >= 0.0) {
    rng.uniform();  // keep the stream position independent of the outcome
    return true;
  }
  return std::log(rng.uniform()) < log_ratio;
}

// Per canvas entry Gaussian conditional of a feature placed at t given the
// target image `base`: variance per pixel, mean channel-planar.
struct Conditional {
  std::vector<double> variance;
  std::vector<double> mean;
};

Conditional placement_conditional(const ModelState& state, const FeatureCanvas& shape_of,
                                  const Transformation& t, const Raster& base) {
  const std::size_t P = shape_of.pixel_count();
  const int C = shape_of.channels;
  const std::size_t plane = base.pixel_count();
  std::vector<double> cnt(P, 0.0), sum(P * C, 0.0);
  for_each_landing(state.space, t, [&](int e, int src) {
    cnt[src] += 1.0;
    for (int c = 0; c < C; ++c) sum[c * P + src] += base.values[c * plane + e];
  });
  const double inv_a = 1.0 / (state.hyper.sigma_a * state.hyper.sigma_a);
  const double inv_x = 1.0 / (state.hyper.sigma_x * state.hyper.sigma_x);
  Conditional out{std::vector<double>(P), std::vector<double>(P * C)};
  for (std::size_t d = 0; d < P; ++d) {
    out.variance[d] = 1.0 / (inv_a + inv_x * cnt[d]);
    for (int c = 0; c < C; ++c) out.mean[c * P + d] = out.variance[d] * inv_x * sum[c * P + d];
  }
  return out;
}

// x_n minus its mean without feature `exclude` (-1 keeps every feature).
Raster unexplained(const ModelState& state, int n, int exclude) {
  Raster r = state.image(n);
  const Raster mean = compose_excluding(state, n, exclude);
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] -= mean.values[i];
  return r;
}

// Birth placement proposal: log q(t) proportional to the unexplained energy
// the transformed canvas covers, scaled as the log-likelihood gain of explaining
// it exactly.
std::vector<double> placement_log_proposal(const ModelState& state, const Raster& base) {
  const std::size_t plane = base.pixel_count();
  std::vector<double> energy(plane, 0.0);
  for (int c = 0; c < base.channels; ++c) {
    for (std::size_t e = 0; e < plane; ++e) energy[e] += base.values[c * plane + e] * base.values[c * plane + e];
  }
  const double scale = 1.0 / (2.0 * state.hyper.sigma_x * state.hyper.sigma_x);
  const int T = state.space.size();
  std::vector<double> lq(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    double s = 0.0;
    for_each_landing(state.space, state.space.at(i), [&](int e, int) { s += energy[e]; });
    lq[i] = s * scale;
  }
  const double z = log_sum_exp(lq);
  for (double& v : lq) v -= z;
  return lq;
}

// Per-pixel mask probabilities for a newborn feature: pixel magnitude over
// channels divided by the largest magnitude.
std::vector<double> birth_mask_probabilities(const FeatureCanvas& a) {
  const std::size_t P = a.pixel_count();
  std::vector<double> mag(P, 0.0);
  for (std::size_t d = 0; d < P; ++d) {
    double s = 0.0;
    for (int c = 0; c < a.channels; ++c) s += a.values[c * P + d] * a.values[c * P + d];
    mag[d] = std::sqrt(s);
  }
  const double top = *std::max_element(mag.begin(), mag.end());
  for (double& m : mag) m = top > 0.0 ? m / top : 0.5;
  return mag;
}

// Visible feature and canvas pixel at image pixel e of image n.
std::pair<int, int> owner_at(const ModelState& state, int n, int e) {
  const int W = state.space.image_width();
  const int y = e / W, x = e % W;
  int best = -1, best_src = -1, best_rank = std::numeric_limits<int>::min();
  for (int j = 0; j < state.num_features(); ++j) {
    if (!state.uses(n, j)) continue;
    const Feature& f = state.features[j];
    if (f.rank <= best_rank) continue;
    const auto src = inverse_pixel_map(state.space, f.transforms[n], y, x);
    if (src && f.masks[n][*src]) {
      best = j;
      best_src = *src;
      best_rank = f.rank;
    }
  }
  return {best, best_src};
}

double pixel_squared_error(const ModelState& state, int n, int e) {
  const Image& x = state.image(n);
  const std::size_t plane = x.pixel_count();
  const auto [k, src] = owner_at(state, n, e);
  double ss = 0.0;
  for (int c = 0; c < x.channels; ++c) {
    const double mean =
        k < 0 ? 0.0 : state.features[k].canvas.values[c * state.features[k].canvas.pixel_count() + src];
    const double err = x.values[c * plane + e] - mean;
    ss += err * err;
  }
  return ss;
}

void deactivate(Feature& f, int n, const Transformation& identity) {
  f.used[n] = 0;
  f.transforms[n] = identity;
  f.masks[n] = BitGrid();
}

}  // namespace

const char* move_name(Move m) {
  switch (m) {
    case Move::flip: return "flip";
    case Move::death: return "death";
    case Move::birth: return "birth";
    case Move::resample: return "resample";
    case Move::mask: return "mask";
    case Move::swap: return "swap";
    case Move::naive: return "naive";
    case Move::count_: break;
  }
  return "?";
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::flips: return "flips";
    case Phase::births: return "births";
    case Phase::resample: return "resample";
    case Phase::masks: return "masks";
    case Phase::order: return "order";
    case Phase::features: return "features";
    case Phase::hyper: return "hyper";
    case Phase::prune: return "prune";
    case Phase::count_: break;
  }
  return "?";
}

double harmonic_number(int n) {
  double h = 0.0;
  for (int i = 1; i <= n; ++i) h += 1.0 / i;
  return h;
}

double acceptance_probability(double log_ratio) {
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

double image_log_likelihood(const ModelState& state, int n) {
  return image_log_likelihood(state.image(n), compose_image(state, n), state.hyper.sigma_x);
}

double mask_proposal_probability(const ModelState& state, int n, int k, int d) {
  if (!state.masked()) fail(ErrorKind::variant, "masks exist in the masked model only");
  const Feature& f = state.features[k];
  int users = 0, on = 0;
  for (int m = 0; m < state.num_images(); ++m) {
    if (m == n || !f.used[m]) continue;
    ++users;
    if (f.masks[m][d]) ++on;
  }
  const double beta = state.hyper.beta;
  return (on + beta) / (users + 2.0 * beta);
}

std::pair<double, double> alpha_posterior(const ModelState& state) {
  int represented = 0;
  for (const auto& f : state.features) {
    if (f.usage() > 0) ++represented;
  }
  return {state.hyper.alpha_shape + represented,
          state.hyper.alpha_rate + harmonic_number(state.num_images())};
}

FeaturePosteriorStats feature_posterior_stats(const ModelState& state, int k) {
  const Feature& f = state.features[k];
  FeaturePosteriorStats st;
  st.height = f.canvas.height;
  st.width = f.canvas.width;
  st.channels = f.canvas.channels;
  const std::size_t P = st.pixels();
  const int C = st.channels;
  st.count.assign(P, 0.0);
  st.data_sum.assign(P * C, 0.0);
  for (int n = 0; n < state.num_images(); ++n) {
    if (!f.used[n]) continue;
    const std::size_t plane = state.image(n).pixel_count();
    if (state.masked()) {
      const Image& x = state.image(n);
      const VisibilityTensor vis = visibility_indicators(state, n);
      for (std::size_t e = 0; e < plane; ++e) {
        if (vis.owner[e] != k) continue;
        const int src = vis.source[e];
        st.count[src] += 1.0;
        for (int c = 0; c < C; ++c) st.data_sum[c * P + src] += x.values[c * plane + e];
      }
    } else {
      const Raster eps = residual(state, n, k);
      for_each_landing(state.space, f.transforms[n], [&](int e, int src) {
        st.count[src] += 1.0;
        for (int c = 0; c < C; ++c) st.data_sum[c * P + src] += eps.values[c * plane + e];
      });
    }
  }
  const double inv_a = 1.0 / (state.hyper.sigma_a * state.hyper.sigma_a);
  const double inv_x = 1.0 / (state.hyper.sigma_x * state.hyper.sigma_x);
  st.variance.resize(P);
  st.mean.resize(P * C);
  for (std::size_t d = 0; d < P; ++d) {
    st.variance[d] = 1.0 / (inv_a + inv_x * st.count[d]);
    for (int c = 0; c < C; ++c) st.mean[c * P + d] = st.variance[d] * inv_x * st.data_sum[c * P + d];
  }
  return st;
}

// ---------------------------------------------------------------------------

Sampler::Sampler(const ModelState& state, SamplerOptions options)
    : options_(options),
      engine_(state.space, state.data ? state.data->channels() : 1, options.proposal_temperature) {}

void Sampler::record(Move m, bool accepted) {
  auto& s = stats_[static_cast<std::size_t>(m)];
  ++s.proposed;
  if (accepted) ++s.accepted;
}

TransformationProposal Sampler::proposal_for(const ModelState& state, int n, int k) {
  if (state.space.size() == 1) return proposal_from_scores({0.0});
  const Feature& f = state.features[k];
  return engine_.propose(residual(state, n, k, options_.proposal_sees_unexplained), f.canvas, f.id,
                         f.version);
}

BitGrid Sampler::sample_mask_conditional(const ModelState& state, int n, int k, Rng& rng) const {
  const Feature& f = state.features[k];
  BitGrid mask(f.canvas.height, f.canvas.width);
  const std::size_t P = f.canvas.pixel_count();
  std::vector<int> on(P, 0);
  int users = 0;
  for (int m = 0; m < state.num_images(); ++m) {
    if (m == n || !f.used[m]) continue;
    ++users;
    for (std::size_t d = 0; d < P; ++d) on[d] += f.masks[m][d];
  }
  const double beta = state.hyper.beta;
  for (std::size_t d = 0; d < P; ++d) {
    mask[d] = rng.bernoulli((on[d] + beta) / (users + 2.0 * beta)) ? 1 : 0;
  }
  return mask;
}

bool Sampler::mh_update_feature_use(ModelState& state, int n, int k, Rng& rng) {
  const int m = state.usage_excluding(n, k);
  if (m == 0) fail(ErrorKind::precondition, "feature is not used by any other image");
  const double N = state.num_images();
  const double log_on = std::log(m / N);
  const double log_off = std::log(1.0 - m / N);
  const double log_t = std::log(static_cast<double>(state.space.size()));
  const TransformationProposal prop = proposal_for(state, n, k);
  Feature& f = state.features[k];
  const double ll_cur = image_log_likelihood(state, n);

  bool accepted = false;
  if (!f.used[n]) {
    const auto [t, log_q] = sample_transformation(prop, state.space, rng);
    f.used[n] = 1;
    f.transforms[n] = t;
    if (state.masked()) f.masks[n] = sample_mask_conditional(state, n, k, rng);
    const double ll_new = image_log_likelihood(state, n);
    const double log_ratio = ll_new - ll_cur + log_on - log_t - log_off - log_q;
    accepted = accept(log_ratio, rng);
    if (!accepted) deactivate(f, n, state.space.identity());
  } else {
    const double log_q = prop.log_prob[state.space.index_of(f.transforms[n])];
    const Transformation old_t = f.transforms[n];
    BitGrid old_mask = std::move(f.masks[n]);
    deactivate(f, n, state.space.identity());
    const double ll_new = image_log_likelihood(state, n);
    const double log_ratio = ll_new - ll_cur + log_off + log_q - log_on + log_t;
    accepted = accept(log_ratio, rng);
    if (!accepted) {
      f.used[n] = 1;
      f.transforms[n] = old_t;
      f.masks[n] = std::move(old_mask);
    }
  }
  record(Move::flip, accepted);
  return accepted;
}

double Sampler::birth_log_correction(const ModelState& state, int n, const Feature& f,
                                     const Transformation& t, const Raster& base,
                                     const std::vector<double>& placement) const {
  double lc = 0.0;
  if (!placement.empty()) {
    lc += -std::log(static_cast<double>(state.space.size())) - placement[state.space.index_of(t)];
  }
  if (state.masked()) {
    const auto probs = birth_mask_probabilities(f.canvas);
    const BitGrid& mask = f.masks[n];
    for (std::size_t d = 0; d < probs.size(); ++d) {
      lc += std::log(0.5) - log_bernoulli(mask[d] != 0, probs[d]);
    }
  }
  if (options_.birth_proposal == BirthProposal::conditional) {
    const Conditional q = placement_conditional(state, f.canvas, t, base);
    const double var_a = state.hyper.sigma_a * state.hyper.sigma_a;
    const std::size_t P = f.canvas.pixel_count();
    for (int c = 0; c < f.canvas.channels; ++c) {
      for (std::size_t d = 0; d < P; ++d) {
        const double a = f.canvas.values[c * P + d];
        lc += log_normal_density(a, 0.0, var_a) - log_normal_density(a, q.mean[c * P + d], q.variance[d]);
      }
    }
  }
  return lc;
}

bool Sampler::mh_death_singleton(ModelState& state, int n, int k, Rng& rng) {
  Feature& f = state.features[k];
  if (!f.used[n] || state.usage_excluding(n, k) != 0) {
    fail(ErrorKind::precondition, "death applies to features used by this image alone");
  }
  const Raster base = residual(state, n, state.masked() ? -1 : k);
  std::vector<double> placement;
  if (options_.birth_proposal == BirthProposal::conditional) {
    placement = placement_log_proposal(state, unexplained(state, n, k));
  }
  const double correction = birth_log_correction(state, n, f, f.transforms[n], base, placement);
  const double ll_with = image_log_likelihood(state, n);
  const Transformation old_t = f.transforms[n];
  BitGrid old_mask = std::move(f.masks[n]);
  deactivate(f, n, state.space.identity());
  const double ll_without = image_log_likelihood(state, n);
  const bool accepted = accept(ll_without - ll_with - correction, rng);
  if (!accepted) {
    f.used[n] = 1;
    f.transforms[n] = old_t;
    f.masks[n] = std::move(old_mask);
  }
  record(Move::death, accepted);
  return accepted;
}

int Sampler::mh_birth_new_features(ModelState& state, int n, Rng& rng) {
  const int N = state.num_images();
  const int count = rng.poisson(state.hyper.alpha / N);
  if (count == 0) return 0;
  const Raster base = residual(state, n, -1);
  const double ll_old = image_log_likelihood(state, n);
  const bool conditional = options_.birth_proposal == BirthProposal::conditional;
  std::vector<double> placement;
  TransformationProposal placement_q;
  if (conditional) {
    placement = placement_log_proposal(state, unexplained(state, n, -1));
    placement_q.log_prob = placement;
    placement_q.prob.resize(placement.size());
    for (std::size_t i = 0; i < placement.size(); ++i) placement_q.prob[i] = std::exp(placement[i]);
  }
  const int first = state.num_features();
  const int C = state.data->channels();
  double correction = 0.0;
  for (int i = 0; i < count; ++i) {
    const Transformation t = conditional ? sample_transformation(placement_q, state.space, rng).first
                                         : state.space.at(rng.uniform_int(0, state.space.size() - 1));
    FeatureCanvas a(state.space.canvas_height(), state.space.canvas_width(), C);
    if (conditional) {
      const Conditional q = placement_conditional(state, a, t, base);
      const std::size_t P = a.pixel_count();
      for (int c = 0; c < C; ++c) {
        for (std::size_t d = 0; d < P; ++d) {
          a.values[c * P + d] = rng.normal(q.mean[c * P + d], std::sqrt(q.variance[d]));
        }
      }
    } else {
      for (double& v : a.values) v = rng.normal(0.0, state.hyper.sigma_a);
    }
    const int k = add_feature(state, std::move(a));
    Feature& f = state.features[k];
    f.used[n] = 1;
    f.transforms[n] = t;
    if (state.masked()) {
      const auto probs = birth_mask_probabilities(f.canvas);
      BitGrid mask(f.canvas.height, f.canvas.width);
      for (std::size_t d = 0; d < probs.size(); ++d) mask[d] = rng.bernoulli(probs[d]) ? 1 : 0;
      f.masks[n] = std::move(mask);
    }
    correction += birth_log_correction(state, n, f, t, base, placement);
  }
  const double ll_new = image_log_likelihood(state, n);
  const bool accepted = accept(ll_new - ll_old + correction, rng);
  if (!accepted) state.features.resize(first);
  record(Move::birth, accepted);
  if (accepted) births_accepted_ += count;
  return accepted ? count : 0;
}

bool Sampler::resample_transform_and_mask(ModelState& state, int n, int k, Rng& rng) {
  Feature& f = state.features[k];
  if (!f.used[n]) fail(ErrorKind::precondition, "resampling requires z_nk = 1");
  const TransformationProposal prop = proposal_for(state, n, k);
  const double ll_old = image_log_likelihood(state, n);
  const Transformation old_t = f.transforms[n];
  const double log_q_old = prop.log_prob[state.space.index_of(old_t)];
  const auto [t, log_q_new] = sample_transformation(prop, state.space, rng);
  BitGrid old_mask = f.masks[n];
  f.transforms[n] = t;
  if (state.masked()) f.masks[n] = sample_mask_conditional(state, n, k, rng);
  const double ll_new = image_log_likelihood(state, n);
  const bool accepted = accept(ll_new - ll_old + log_q_old - log_q_new, rng);
  if (!accepted) {
    f.transforms[n] = old_t;
    f.masks[n] = std::move(old_mask);
  }
  record(Move::resample, accepted);
  return accepted;
}

int Sampler::gibbs_mask_pixel(ModelState& state, int n, int k, int d, Rng& rng) {
  if (!state.masked()) fail(ErrorKind::variant, "masks exist in the masked model only");
  Feature& f = state.features[k];
  if (!f.used[n]) fail(ErrorKind::precondition, "mask Gibbs requires z_nk = 1");
  std::vector<int> landing;
  for_each_landing(state.space, f.transforms[n], [&](int e, int src) {
    if (src == d) landing.push_back(e);
  });
  const double p1 = mask_proposal_probability(state, n, k, d);
  const double inv2v = 1.0 / (2.0 * state.hyper.sigma_x * state.hyper.sigma_x);
  std::array<double, 2> logw{};
  for (int bit = 0; bit < 2; ++bit) {
    f.masks[n][d] = static_cast<std::uint8_t>(bit);
    double ss = 0.0;
    for (int e : landing) ss += pixel_squared_error(state, n, e);
    logw[bit] = -ss * inv2v + std::log(bit ? p1 : 1.0 - p1);
  }
  const double p_on = 1.0 / (1.0 + std::exp(logw[0] - logw[1]));
  const int bit = rng.bernoulli(p_on) ? 1 : 0;
  f.masks[n][d] = static_cast<std::uint8_t>(bit);
  record(Move::mask, true);
  return bit;
}

void Sampler::gibbs_masks(ModelState& state, int n, int k, Rng& rng) {
  Feature& f = state.features[k];
  const std::size_t P = f.canvas.pixel_count();
  std::vector<std::vector<int>> landing(P);
  for_each_landing(state.space, f.transforms[n], [&](int e, int src) { landing[src].push_back(e); });
  std::vector<int> on(P, 0);
  int users = 0;
  for (int m = 0; m < state.num_images(); ++m) {
    if (m == n || !f.used[m]) continue;
    ++users;
    for (std::size_t d = 0; d < P; ++d) on[d] += f.masks[m][d];
  }
  const double beta = state.hyper.beta;
  const double inv2v = 1.0 / (2.0 * state.hyper.sigma_x * state.hyper.sigma_x);
  for (std::size_t d = 0; d < P; ++d) {
    const double p1 = (on[d] + beta) / (users + 2.0 * beta);
    std::array<double, 2> logw{};
    for (int bit = 0; bit < 2; ++bit) {
      f.masks[n][d] = static_cast<std::uint8_t>(bit);
      double ss = 0.0;
      for (int e : landing[d]) ss += pixel_squared_error(state, n, e);
      logw[bit] = -ss * inv2v + std::log(bit ? p1 : 1.0 - p1);
    }
    const double p_on = 1.0 / (1.0 + std::exp(logw[0] - logw[1]));
    f.masks[n][d] = rng.bernoulli(p_on) ? 1 : 0;
    record(Move::mask, true);
  }
}

bool Sampler::mh_swap_adjacent_order(ModelState& state, Rng& rng) {
  if (!state.masked()) fail(ErrorKind::variant, "feature order exists in the masked model only");
  const int K = state.num_features();
  if (K < 2) return false;
  const int lower = rng.uniform_int(1, K - 1);
  int a = -1, b = -1;
  for (int k = 0; k < K; ++k) {
    if (state.features[k].rank == lower) a = k;
    if (state.features[k].rank == lower + 1) b = k;
  }
  std::vector<int> images;
  for (int n = 0; n < state.num_images(); ++n) {
    if (state.uses(n, a) || state.uses(n, b)) images.push_back(n);
  }
  double ll_old = 0.0;
  for (int n : images) ll_old += image_log_likelihood(state, n);
  std::swap(state.features[a].rank, state.features[b].rank);
  double ll_new = 0.0;
  for (int n : images) ll_new += image_log_likelihood(state, n);
  const bool accepted = accept(ll_new - ll_old, rng);
  if (!accepted) std::swap(state.features[a].rank, state.features[b].rank);
  record(Move::swap, accepted);
  return accepted;
}

double Sampler::gibbs_feature_pixel(ModelState& state, int k, int d, int c, Rng& rng) {
  const FeaturePosteriorStats st = feature_posterior_stats(state, k);
  const std::size_t P = st.pixels();
  Feature& f = state.features[k];
  const double v = rng.normal(st.mean[c * P + d], std::sqrt(st.variance[d]));
  f.canvas.values[c * P + d] = v;
  ++f.version;
  return v;
}

void Sampler::gibbs_feature(ModelState& state, int k, Rng& rng) {
  const FeaturePosteriorStats st = feature_posterior_stats(state, k);
  const std::size_t P = st.pixels();
  Feature& f = state.features[k];
  for (int c = 0; c < st.channels; ++c) {
    for (std::size_t d = 0; d < P; ++d) {
      f.canvas.values[c * P + d] = rng.normal(st.mean[c * P + d], std::sqrt(st.variance[d]));
    }
  }
  ++f.version;
}

// Visibility does not depend on feature values, so every feature's
// conditional can be accumulated from one visibility pass per image.
void Sampler::gibbs_features_masked(ModelState& state, Rng& rng) {
  const int K = state.num_features();
  if (K == 0) return;
  const int C = state.data->channels();
  const std::size_t P = state.features.front().canvas.pixel_count();
  std::vector<std::vector<double>> cnt(K, std::vector<double>(P, 0.0));
  std::vector<std::vector<double>> sum(K, std::vector<double>(P * C, 0.0));
  for (int n = 0; n < state.num_images(); ++n) {
    const Image& x = state.image(n);
    const std::size_t plane = x.pixel_count();
    const VisibilityTensor vis = visibility_indicators(state, n);
    for (std::size_t e = 0; e < plane; ++e) {
      const int k = vis.owner[e];
      if (k < 0) continue;
      const int src = vis.source[e];
      cnt[k][src] += 1.0;
      for (int c = 0; c < C; ++c) sum[k][c * P + src] += x.values[c * plane + e];
    }
  }
  const double inv_a = 1.0 / (state.hyper.sigma_a * state.hyper.sigma_a);
  const double inv_x = 1.0 / (state.hyper.sigma_x * state.hyper.sigma_x);
  for (int k = 0; k < K; ++k) {
    Feature& f = state.features[k];
    for (int c = 0; c < C; ++c) {
      for (std::size_t d = 0; d < P; ++d) {
        const double var = 1.0 / (inv_a + inv_x * cnt[k][d]);
        f.canvas.values[c * P + d] = rng.normal(var * inv_x * sum[k][c * P + d], std::sqrt(var));
      }
    }
    ++f.version;
  }
}

Hyperparameters Sampler::gibbs_hyperparameters(ModelState& state, Rng& rng) {
  auto& h = state.hyper;
  if (options_.sample_alpha) {
    const auto [shape, rate] = alpha_posterior(state);
    h.alpha = rng.gamma(shape, rate);
  }
  if (options_.sample_sigma_x) {
    double sse = 0.0, entries = 0.0;
    for (int n = 0; n < state.num_images(); ++n) {
      sse += squared_error(state.image(n), compose_image(state, n));
      entries += static_cast<double>(state.image(n).size());
    }
    h.sigma_x = std::sqrt(rng.inverse_gamma(h.noise_shape + entries / 2.0, h.noise_scale + sse / 2.0));
  }
  if (options_.sample_sigma_a) {
    double ss = 0.0, entries = 0.0;
    for (const auto& f : state.features) {
      for (double a : f.canvas.values) ss += a * a;
      entries += static_cast<double>(f.canvas.size());
    }
    h.sigma_a =
        std::sqrt(rng.inverse_gamma(h.feature_shape + entries / 2.0, h.feature_scale + ss / 2.0));
  }
  return h;
}

std::vector<double> Sampler::exact_transformation_conditional(const ModelState& state, int n,
                                                              int k) const {
  const Image& x = state.image(n);
  const Raster others = compose_excluding(state, n, k);
  const Feature& f = state.features[k];
  const std::size_t plane = x.pixel_count();
  const std::size_t cplane = f.canvas.pixel_count();
  const int C = x.channels;
  std::vector<double> ll(static_cast<std::size_t>(state.space.size()));
  Raster mean(x.height, x.width, C);
  for (int i = 0; i < state.space.size(); ++i) {
    mean.values = others.values;
    for_each_landing(state.space, state.space.at(i), [&](int e, int src) {
      for (int c = 0; c < C; ++c) mean.values[c * plane + e] += f.canvas.values[c * cplane + src];
    });
    ll[i] = image_log_likelihood(x, mean, state.hyper.sigma_x);
  }
  const double z = log_sum_exp(ll);
  for (double& v : ll) v = std::exp(v - z);
  return ll;
}

void Sampler::naive_enumeration_update(ModelState& state, int n, int k, Rng& rng) {
  if (state.masked()) fail(ErrorKind::variant, "enumeration over masks is intractable");
  const int m = state.usage_excluding(n, k);
  if (m == 0) fail(ErrorKind::precondition, "feature is not used by any other image");
  const double N = state.num_images();
  const Image& x = state.image(n);
  const Raster others = compose_excluding(state, n, k);
  const Feature& fc = state.features[k];
  const std::size_t plane = x.pixel_count();
  const std::size_t cplane = fc.canvas.pixel_count();
  const int C = x.channels;
  const int T = state.space.size();
  std::vector<double> ll(static_cast<std::size_t>(T));
  Raster mean(x.height, x.width, C);
  for (int i = 0; i < T; ++i) {
    mean.values = others.values;
    for_each_landing(state.space, state.space.at(i), [&](int e, int src) {
      for (int c = 0; c < C; ++c) mean.values[c * plane + e] += fc.canvas.values[c * cplane + src];
    });
    ll[i] = image_log_likelihood(x, mean, state.hyper.sigma_x);
  }
  const double ll0 = image_log_likelihood(x, others, state.hyper.sigma_x);
  const double log_z1 = std::log(m / N) - std::log(static_cast<double>(T)) + log_sum_exp(ll);
  const double log_z0 = std::log(1.0 - m / N) + ll0;
  const double p_on = 1.0 / (1.0 + std::exp(log_z0 - log_z1));
  Feature& f = state.features[k];
  const bool was_on = f.used[n] != 0;
  if (rng.bernoulli(p_on)) {
    const double top = *std::max_element(ll.begin(), ll.end());
    TransformationProposal cond;
    cond.prob.resize(ll.size());
    cond.log_prob.resize(ll.size());
    double s = 0.0;
    for (double v : ll) s += std::exp(v - top);
    for (std::size_t i = 0; i < ll.size(); ++i) {
      cond.log_prob[i] = ll[i] - top - std::log(s);
      cond.prob[i] = std::exp(cond.log_prob[i]);
    }
    const auto [t, _] = sample_transformation(cond, state.space, rng);
    f.used[n] = 1;
    f.transforms[n] = t;
    record(Move::naive, true);
  } else {
    deactivate(f, n, state.space.identity());
    record(Move::naive, was_on);
  }
}

void Sampler::update_image(ModelState& state, int n, Rng& rng) {
  for (int k = 0; k < state.num_features(); ++k) {
    if (state.usage_excluding(n, k) > 0) mh_update_feature_use(state, n, k, rng);
  }
  if (state.space.size() > 1 || state.masked()) {
    for (int k = 0; k < state.num_features(); ++k) {
      if (state.uses(n, k)) resample_transform_and_mask(state, n, k, rng);
    }
  }
  if (state.masked()) {
    for (int k = 0; k < state.num_features(); ++k) {
      if (state.uses(n, k)) gibbs_masks(state, n, k, rng);
    }
  }
}

SweepReport Sampler::sweep(ModelState& state) { return run_sweep(state, false); }
SweepReport Sampler::naive_sweep(ModelState& state) { return run_sweep(state, true); }

SweepReport Sampler::run_sweep(ModelState& state, bool naive) {
  if (naive && state.masked()) fail(ErrorKind::variant, "the enumeration sampler supports unmasked models only");
  reset_stats();
  births_accepted_ = 0;
  Rng& rng = state.rng;
  SweepReport rep;
  const auto start = Clock::now();
  auto timed = [&](Phase p, auto&& body) {
    const auto t0 = Clock::now();
    body();
    rep.seconds[static_cast<std::size_t>(p)] += seconds_since(t0);
  };
  const int N = state.num_images();

  timed(Phase::flips, [&] {
    for (int n = 0; n < N; ++n) {
      for (int k = 0; k < state.num_features(); ++k) {
        if (state.usage_excluding(n, k) > 0) {
          if (naive) {
            naive_enumeration_update(state, n, k, rng);
          } else {
            mh_update_feature_use(state, n, k, rng);
          }
        } else if (state.uses(n, k)) {
          mh_death_singleton(state, n, k, rng);
        }
      }
    }
  });
  timed(Phase::births, [&] {
    if (!options_.births) return;
    for (int n = 0; n < N; ++n) mh_birth_new_features(state, n, rng);
  });
  timed(Phase::resample, [&] {
    if (naive || (state.space.size() == 1 && !state.masked())) return;
    for (int n = 0; n < N; ++n) {
      for (int k = 0; k < state.num_features(); ++k) {
        if (state.uses(n, k)) resample_transform_and_mask(state, n, k, rng);
      }
    }
  });
  timed(Phase::masks, [&] {
    if (!state.masked()) return;
    for (int n = 0; n < N; ++n) {
      for (int k = 0; k < state.num_features(); ++k) {
        if (state.uses(n, k)) gibbs_masks(state, n, k, rng);
      }
    }
  });
  timed(Phase::order, [&] {
    if (!state.masked()) return;
    const int K = state.num_features();
    for (int i = 0; i < K && K >= 2; ++i) mh_swap_adjacent_order(state, rng);
  });
  timed(Phase::features, [&] {
    if (state.masked()) {
      gibbs_features_masked(state, rng);
    } else {
      for (int k = 0; k < state.num_features(); ++k) gibbs_feature(state, k, rng);
    }
  });
  timed(Phase::hyper, [&] {
    if (state.iteration >= options_.hyper_burnin) gibbs_hyperparameters(state, rng);
  });
  timed(Phase::prune, [&] {
    prune_empty_features(state);
    if (state.masked()) {
      const double beta = state.hyper.beta;
      for (auto& f : state.features) {
        const int m = f.usage();
        for (std::size_t d = 0; d < f.shape.size(); ++d) {
          int on = 0;
          for (int n = 0; n < N; ++n) {
            if (f.used[n] && f.masks[n][d]) ++on;
          }
          f.shape[d] = (on + beta) / (m + 2.0 * beta);
        }
      }
    }
  });

  ++state.iteration;
  rep.iteration = state.iteration;
  rep.log_likelihood = data_log_likelihood(state);
  rep.log_joint = rep.log_likelihood + log_prior(state);
  rep.num_features = state.num_features();
  rep.moves = stats_;
  rep.births_accepted = births_accepted_;
  rep.total_seconds = seconds_since(start);
  return rep;
}

}  // namespace tibp
