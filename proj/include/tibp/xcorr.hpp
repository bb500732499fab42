#pragma once

#include <cstdint>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tibp/image.hpp"
#include "tibp/rng.hpp"
#include "tibp/transform.hpp"

namespace tibp {

// Full linear cross-correlation scores over lags dy in [min_dy, min_dy+rows),
// dx in [min_dx, min_dx+cols), row-major.
struct LagMap {
  int rows = 0;
  int cols = 0;
  int min_dy = 0;
  int min_dx = 0;
  std::vector<double> scores;

  double at(int dy, int dx) const {
    return scores[static_cast<std::size_t>(dy - min_dy) * cols + (dx - min_dx)];
  }
};

// scores(dy, dx) = sum_{i,j} tmpl(i, j) * residual(i + dy, j + dx), residual
// zero outside its frame. Single-channel: channel 0 of each raster is used.
LagMap cross_correlate_full(const Raster& residual, const Raster& tmpl);
LagMap brute_force_cross_correlate(const Raster& residual, const Raster& tmpl);

// Categorical distribution over a transformation space in canonical order.
struct TransformationProposal {
  std::vector<double> log_prob;  // normalized
  std::vector<double> prob;
  double log_normalizer = 0.0;  // log sum exp of the shifted scores

  int size() const { return static_cast<int>(prob.size()); }
};

// exp(score / temperature), normalized with max-subtraction.
TransformationProposal proposal_from_scores(const std::vector<double>& scores,
                                            double temperature = 1.0);

// Scores summed over channels for every transformation in canonical order.
std::vector<double> correlation_scores(const Raster& residual, const FeatureCanvas& canvas,
                                       const TransformationSpace& space);

TransformationProposal transformation_proposal(const Raster& residual, const FeatureCanvas& canvas,
                                               const TransformationSpace& space,
                                               double temperature = 1.0);

// Inverse-CDF draw over the canonical order. Returns the drawn transformation
// and its log proposal probability.
std::pair<Transformation, double> sample_transformation(const TransformationProposal& proposal,
                                                        const TransformationSpace& space,
                                                        Rng& rng);
// Same, driven by an explicit uniform variate u in [0, 1).
int inverse_cdf_index(const TransformationProposal& proposal, double u);

// Computes proposals for one transformation space with a shared FFT size and
// cached feature spectra, keyed by (feature id, canvas version).
class ProposalEngine {
 public:
  ProposalEngine(const TransformationSpace& space, int channels, double temperature = 1.0);
  ~ProposalEngine();
  ProposalEngine(ProposalEngine&&) noexcept;
  ProposalEngine& operator=(ProposalEngine&&) noexcept;

  std::vector<double> scores(const Raster& residual, const FeatureCanvas& canvas, int feature_id,
                             std::uint64_t version);
  TransformationProposal propose(const Raster& residual, const FeatureCanvas& canvas,
                                 int feature_id, std::uint64_t version);

  const TransformationSpace& space() const { return space_; }
  double temperature() const { return temperature_; }
  void clear_cache();

 private:
  struct Impl;
  TransformationSpace space_;
  double temperature_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tibp
