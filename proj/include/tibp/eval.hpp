#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "tibp/model.hpp"
#include "tibp/sampler.hpp"
#include "tibp/synth.hpp"

namespace tibp {

struct Reconstruction {
  Image image;
  std::vector<std::uint8_t> z;  // per trained feature
  std::vector<Transformation> transforms;
  std::vector<BitGrid> masks;
};

// Infers z, r (and s) for one normalized test image against frozen trained
// features and returns the composed mean image.
Reconstruction reconstruct_test_image(const ModelState& trained, const Image& x_test, int n_sweeps,
                                      Rng& rng, double proposal_temperature = 1.0);

double per_pixel_rmse(const Image& reconstruction, const Image& truth);
// Re-expresses an image stored in `from`'s normalization in `to`'s.
Image convert_units(const Image& image, const Dataset& from, const Dataset& to);

// Pooled RMSE of compose_image against the data over every training image,
// optionally measured in the units of another normalization.
double training_rmse(const ModelState& state, const Dataset* units = nullptr);

struct MatchResult {
  std::vector<std::vector<double>> cost;  // true x learned
  std::vector<int> assignment;            // per true feature, learned index or -1
  std::vector<double> matched_rmse;       // per true feature, inf when unmatched
  double mean_rmse = 0.0;
  std::vector<int> unmatched_learned;
};

// Smallest RMSE between `truth` and `learned` over the rotations and scales of
// the space and every relative offset, evaluated on the true canvas frame.
double match_cost(const FeatureCanvas& learned, const FeatureCanvas& truth,
                  const TransformationSpace& space);

MatchResult feature_match_score(const std::vector<FeatureCanvas>& learned,
                                const std::vector<FeatureCanvas>& truth,
                                const TransformationSpace& space);

// Minimum-cost one-to-one assignment of rows to columns; result[i] is the
// column given to row i, or -1 when there are more rows than columns.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

// Learned appearances for matching: canvas values, with pixels whose shape
// probability is below 0.5 zeroed in the masked model. With `units`, values
// are re-expressed in that dataset's normalization.
std::vector<FeatureCanvas> learned_appearances(const ModelState& state, const Dataset* units = nullptr);

// True glyphs in the data's normalized units: (value - mean) / sd per channel
// on stencil pixels, 0 (no contribution) elsewhere.
std::vector<FeatureCanvas> normalized_truth(const GroundTruth& truth, const Dataset& normalized);

// Seeded shuffle of 0..n-1 split into (train, test) with round(train_fraction * n) train items.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double train_fraction, Rng& rng);
Dataset subset(const Dataset& data, const std::vector<int>& indices);

using SweepCallback = std::function<void(const SweepReport&, const ModelState&)>;

// Runs `sweeps` sweeps in place.
void run_chain(ModelState& state, Sampler& sampler, int sweeps, const SweepCallback& on_sweep = {},
               bool naive = false);

struct BenchmarkRow {
  std::string sampler;
  int image_size = 0;  // D = H * W
  int num_features = 0;
  double seconds = 0.0;
  double log_joint = 0.0;
  int iteration = 0;
};

struct BenchmarkOptions {
  std::vector<int> sizes{9, 15};  // image side lengths
  std::vector<std::string> samplers{"mh", "naive"};
  int iterations = 100;
  std::uint64_t seed = 1;
  int n_images = 100;
  int canvas = 5;
  Hyperparameters hyper;
  SamplerOptions sampler;
};

std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& options,
                                        const std::function<void(const BenchmarkRow&)>& on_row = {});

void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows);

}  // namespace tibp
