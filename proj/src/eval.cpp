#include "tibp/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "tibp/error.hpp"
#include "tibp/likelihood.hpp"

namespace tibp {

Reconstruction reconstruct_test_image(const ModelState& trained, const Image& x_test, int n_sweeps,
                                      Rng& rng, double proposal_temperature) {
  if (!trained.data || x_test.height != trained.data->height() ||
      x_test.width != trained.data->width() || x_test.channels != trained.data->channels()) {
    fail(ErrorKind::dimension, "test image does not match the training dimensions");
  }
  auto data = std::make_shared<Dataset>(*trained.data);
  data->images.push_back(x_test);
  ModelState state = trained;
  state.data = data;
  const int n = data->size() - 1;
  const Transformation id = state.space.identity();
  for (auto& f : state.features) {
    f.used.push_back(0);
    f.transforms.push_back(id);
    f.masks.emplace_back();
  }
  SamplerOptions options;
  options.proposal_temperature = proposal_temperature;
  options.births = false;
  Sampler sampler(state, options);
  for (int s = 0; s < n_sweeps; ++s) sampler.update_image(state, n, rng);

  Reconstruction out;
  out.image = compose_image(state, n);
  for (const auto& f : state.features) {
    out.z.push_back(f.used[n]);
    out.transforms.push_back(f.transforms[n]);
    out.masks.push_back(f.masks[n]);
  }
  return out;
}

double per_pixel_rmse(const Image& reconstruction, const Image& truth) {
  if (!reconstruction.same_shape(truth)) fail(ErrorKind::dimension, "RMSE of differently shaped images");
  if (truth.values.empty()) return 0.0;
  return std::sqrt(squared_error(truth, reconstruction) / static_cast<double>(truth.size()));
}

namespace {

double stat(const std::vector<double>& v, int c, double fallback) {
  return c < static_cast<int>(v.size()) ? v[c] : fallback;
}

}  // namespace

Image convert_units(const Image& image, const Dataset& from, const Dataset& to) {
  Image out = image;
  for (int c = 0; c < out.channels; ++c) {
    const double fm = stat(from.channel_mean, c, 0.0), fs = stat(from.channel_stddev, c, 1.0);
    const double tm = stat(to.channel_mean, c, 0.0), ts = stat(to.channel_stddev, c, 1.0);
    for (double& v : out.channel(c)) v = (v * fs + fm - tm) / ts;
  }
  return out;
}

double training_rmse(const ModelState& state, const Dataset* units) {
  double ss = 0.0, count = 0.0;
  for (int n = 0; n < state.num_images(); ++n) {
    if (units) {
      ss += squared_error(convert_units(state.image(n), *state.data, *units),
                          convert_units(compose_image(state, n), *state.data, *units));
    } else {
      ss += squared_error(state.image(n), compose_image(state, n));
    }
    count += static_cast<double>(state.image(n).size());
  }
  return count > 0.0 ? std::sqrt(ss / count) : 0.0;
}

double match_cost(const FeatureCanvas& learned, const FeatureCanvas& truth,
                  const TransformationSpace& space) {
  if (learned.channels != truth.channels) fail(ErrorKind::dimension, "channel count mismatch");
  const int h = truth.height, w = truth.width, C = truth.channels;
  const std::size_t tplane = truth.pixel_count();
  double truth_ss = 0.0;
  for (double v : truth.values) truth_ss += v * v;
  double best = std::numeric_limits<double>::infinity();
  for (double rot : space.rotations()) {
    for (double scale : space.scales()) {
      const FeatureCanvas l = rotate_scale_canvas(learned, rot, scale);
      const std::size_t lplane = l.pixel_count();
      // Place l's (0, 0) at (dy, dx) of the true frame; squared error is the
      // truth energy plus, over the overlap, (l - t)^2 - t^2.
      for (int dy = -l.height + 1; dy < h; ++dy) {
        for (int dx = -l.width + 1; dx < w; ++dx) {
          double ss = truth_ss;
          for (int i = std::max(0, -dy); i < std::min(l.height, h - dy); ++i) {
            for (int j = std::max(0, -dx); j < std::min(l.width, w - dx); ++j) {
              const std::size_t li = static_cast<std::size_t>(i) * l.width + j;
              const std::size_t ti = static_cast<std::size_t>(i + dy) * w + (j + dx);
              for (int c = 0; c < C; ++c) {
                const double lv = l.values[c * lplane + li];
                const double tv = truth.values[c * tplane + ti];
                ss += (lv - tv) * (lv - tv) - tv * tv;
              }
            }
          }
          best = std::min(best, std::sqrt(std::max(0.0, ss) / static_cast<double>(truth.size())));
        }
      }
    }
  }
  return best;
}

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int rows = static_cast<int>(cost.size());
  if (rows == 0) return {};
  const int cols = static_cast<int>(cost.front().size());
  const int n = std::max(rows, cols);
  const double inf = std::numeric_limits<double>::infinity();
  // Square padding with zero-cost dummies; 1-based potentials formulation.
  auto a = [&](int i, int j) {
    return (i <= rows && j <= cols) ? cost[i - 1][j - 1] : 0.0;
  };
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> result(rows, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] >= 1 && p[j] <= rows && j <= cols) result[p[j] - 1] = j - 1;
  }
  return result;
}

MatchResult feature_match_score(const std::vector<FeatureCanvas>& learned,
                                const std::vector<FeatureCanvas>& truth,
                                const TransformationSpace& space) {
  if (learned.empty()) fail(ErrorKind::precondition, "no learned features to match");
  MatchResult r;
  r.cost.assign(truth.size(), std::vector<double>(learned.size()));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t j = 0; j < learned.size(); ++j) r.cost[i][j] = match_cost(learned[j], truth[i], space);
  }
  r.assignment = hungarian(r.cost);
  std::vector<char> taken(learned.size(), 0);
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int j = r.assignment[i];
    if (j < 0) {
      r.matched_rmse.push_back(std::numeric_limits<double>::infinity());
      total = std::numeric_limits<double>::infinity();
      continue;
    }
    taken[j] = 1;
    r.matched_rmse.push_back(r.cost[i][j]);
    total += r.cost[i][j];
  }
  r.mean_rmse = truth.empty() ? 0.0 : total / static_cast<double>(truth.size());
  for (std::size_t j = 0; j < learned.size(); ++j) {
    if (!taken[j]) r.unmatched_learned.push_back(static_cast<int>(j));
  }
  return r;
}

std::vector<FeatureCanvas> learned_appearances(const ModelState& state, const Dataset* units) {
  std::vector<FeatureCanvas> out;
  const Dataset& own = *state.data;
  for (const auto& f : state.features) {
    FeatureCanvas a = f.canvas;
    const std::size_t P = a.pixel_count();
    if (state.masked()) {
      if (units) a = convert_units(a, own, *units);
      for (std::size_t d = 0; d < P; ++d) {
        if (f.shape[d] >= 0.5) continue;
        for (int c = 0; c < a.channels; ++c) a.values[c * P + d] = 0.0;
      }
    } else if (units) {
      // additive contributions carry no offset
      for (int c = 0; c < a.channels; ++c) {
        const double k = stat(own.channel_stddev, c, 1.0) / stat(units->channel_stddev, c, 1.0);
        for (double& v : a.channel(c)) v *= k;
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<FeatureCanvas> normalized_truth(const GroundTruth& truth, const Dataset& normalized) {
  std::vector<FeatureCanvas> out;
  for (const auto& g : truth.features) {
    FeatureCanvas a = g.canvas;
    const std::size_t P = a.pixel_count();
    for (int c = 0; c < a.channels; ++c) {
      const double mean = c < static_cast<int>(normalized.channel_mean.size()) ? normalized.channel_mean[c] : 0.0;
      const double sd = c < static_cast<int>(normalized.channel_stddev.size()) ? normalized.channel_stddev[c] : 1.0;
      for (std::size_t d = 0; d < P; ++d) {
        a.values[c * P + d] = g.stencil[d] ? (a.values[c * P + d] - mean) / sd : 0.0;
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double train_fraction, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(0, i)]);
  const int n_train = static_cast<int>(std::lround(train_fraction * n));
  std::vector<int> train(idx.begin(), idx.begin() + n_train);
  std::vector<int> test(idx.begin() + n_train, idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

Dataset subset(const Dataset& data, const std::vector<int>& indices) {
  Dataset out;
  out.channel_mean = data.channel_mean;
  out.channel_stddev = data.channel_stddev;
  for (int i : indices) out.images.push_back(data.images.at(i));
  return out;
}

void run_chain(ModelState& state, Sampler& sampler, int sweeps, const SweepCallback& on_sweep,
               bool naive) {
  for (int s = 0; s < sweeps; ++s) {
    const SweepReport rep = naive ? sampler.naive_sweep(state) : sampler.sweep(state);
    if (on_sweep) on_sweep(rep, state);
  }
}

std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& options,
                                        const std::function<void(const BenchmarkRow&)>& on_row) {
  for (const auto& s : options.samplers) {
    if (s != "mh" && s != "naive") fail(ErrorKind::usage, "unknown sampler '" + s + "'");
  }
  std::vector<BenchmarkRow> rows;
  for (int size : options.sizes) {
    SynthSpec spec;
    spec.n_images = options.n_images;
    spec.height = size;
    spec.width = size;
    Rng data_rng(options.seed);
    auto [raw, truth] = generate_synthetic_dataset(spec, data_rng);
    auto data = std::make_shared<const Dataset>(normalize_dataset(raw));
    ModelConfig config;
    config.variant = Variant::lg_tibp;
    config.canvas_h = std::min(options.canvas, size);
    config.canvas_w = std::min(options.canvas, size);
    config.hyper = options.hyper;
    config.seed = options.seed;
    for (const auto& name : options.samplers) {
      ModelState state = init_state(data, config);
      Sampler sampler(state, options.sampler);
      const bool naive = name == "naive";
      run_chain(state, sampler, options.iterations, [&](const SweepReport& rep, const ModelState& st) {
        BenchmarkRow row{name, size * size, st.num_features(), rep.total_seconds, rep.log_joint,
                         rep.iteration};
        rows.push_back(row);
        if (on_row) on_row(row);
      }, naive);
    }
  }
  return rows;
}

void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows) {
  out << "sampler,image_size,num_features,seconds,log_joint,iteration\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.sampler << ',' << r.image_size << ',' << r.num_features << ',' << r.seconds << ','
        << r.log_joint << ',' << r.iteration << '\n';
  }
}

}  // namespace tibp
