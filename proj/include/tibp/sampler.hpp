#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "tibp/likelihood.hpp"
#include "tibp/model.hpp"
#include "tibp/xcorr.hpp"

namespace tibp {

// How candidate feature values are drawn in the birth move.
enum class BirthProposal {
  prior,  // uniform placement, a* ~ N(0, sigma_a^2 I)
  // placement drawn in proportion to the residual energy it covers, then
  // a* ~ its Gaussian conditional given the residual at that placement
  conditional,
};

struct SamplerOptions {
  double proposal_temperature = 1.0;
  BirthProposal birth_proposal = BirthProposal::conditional;
  bool births = true;
  // Masked model: let transformation proposals also see pixels that no
  // feature currently explains.
  bool proposal_sees_unexplained = true;
  // Sweeps to run before the hyperparameters start being resampled.
  int hyper_burnin = 0;
  bool sample_alpha = true;
  bool sample_sigma_x = true;
  bool sample_sigma_a = true;
};

enum class Move { flip, death, birth, resample, mask, swap, naive, count_ };
constexpr std::size_t kMoveCount = static_cast<std::size_t>(Move::count_);
const char* move_name(Move m);

struct MoveStats {
  long proposed = 0;
  long accepted = 0;
};

enum class Phase { flips, births, resample, masks, order, features, hyper, prune, count_ };
constexpr std::size_t kPhaseCount = static_cast<std::size_t>(Phase::count_);
const char* phase_name(Phase p);

struct SweepReport {
  int iteration = 0;
  double log_joint = 0.0;
  double log_likelihood = 0.0;
  int num_features = 0;
  std::array<MoveStats, kMoveCount> moves{};
  int births_accepted = 0;
  std::array<double, kPhaseCount> seconds{};
  double total_seconds = 0.0;
};

// Conjugate statistics for one feature canvas: per canvas pixel, the number of
// image pixels it explains and, per channel, the sum of the data it explains.
struct FeaturePosteriorStats {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> count;     // per canvas pixel
  std::vector<double> data_sum;  // channel-planar
  std::vector<double> variance;  // per canvas pixel
  std::vector<double> mean;      // channel-planar

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

FeaturePosteriorStats feature_posterior_stats(const ModelState& state, int k);

// Beta-Bernoulli predictive probability that s^d_{n,k} = 1 given the other
// images' masks for feature k.
double mask_proposal_probability(const ModelState& state, int n, int k, int d);

// (shape, rate) of the Gamma conditional for alpha.
std::pair<double, double> alpha_posterior(const ModelState& state);
double harmonic_number(int n);

double image_log_likelihood(const ModelState& state, int n);

// min{1, exp(log_ratio)}
double acceptance_probability(double log_ratio);

class Sampler {
 public:
  explicit Sampler(const ModelState& state, SamplerOptions options = {});

  const SamplerOptions& options() const { return options_; }
  SamplerOptions& options() { return options_; }

  // Joint MH flip of (z_nk, r_nk, s_nk) for a feature used by another image.
  bool mh_update_feature_use(ModelState& state, int n, int k, Rng& rng);
  // Removal of a feature used by image n alone; reverse of a single birth.
  bool mh_death_singleton(ModelState& state, int n, int k, Rng& rng);
  // Returns the number of new features accepted into image n.
  int mh_birth_new_features(ModelState& state, int n, Rng& rng);
  bool resample_transform_and_mask(ModelState& state, int n, int k, Rng& rng);
  int gibbs_mask_pixel(ModelState& state, int n, int k, int d, Rng& rng);
  bool mh_swap_adjacent_order(ModelState& state, Rng& rng);
  double gibbs_feature_pixel(ModelState& state, int k, int d, int c, Rng& rng);
  void gibbs_feature(ModelState& state, int k, Rng& rng);
  Hyperparameters gibbs_hyperparameters(ModelState& state, Rng& rng);

  // Gibbs update of (z_nk, r_nk) by enumerating every transformation.
  void naive_enumeration_update(ModelState& state, int n, int k, Rng& rng);
  // Normalized exact conditional over transformations given z_nk = 1.
  std::vector<double> exact_transformation_conditional(const ModelState& state, int n, int k) const;

  TransformationProposal proposal_for(const ModelState& state, int n, int k);

  SweepReport sweep(ModelState& state);
  SweepReport naive_sweep(ModelState& state);

  // Test-time pass over one image with frozen features: flips of existing
  // features, transformation and mask resampling.
  void update_image(ModelState& state, int n, Rng& rng);

  const std::array<MoveStats, kMoveCount>& stats() const { return stats_; }
  void reset_stats() { stats_ = {}; }

 private:
  SweepReport run_sweep(ModelState& state, bool naive);
  void gibbs_masks(ModelState& state, int n, int k, Rng& rng);
  void gibbs_features_masked(ModelState& state, Rng& rng);
  double birth_log_correction(const ModelState& state, int n, const Feature& f,
                              const Transformation& t, const Raster& base,
                              const std::vector<double>& placement) const;
  BitGrid sample_mask_conditional(const ModelState& state, int n, int k, Rng& rng) const;
  void record(Move m, bool accepted);

  SamplerOptions options_;
  ProposalEngine engine_;
  std::array<MoveStats, kMoveCount> stats_{};
  int births_accepted_ = 0;
};

}  // namespace tibp
