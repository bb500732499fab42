// Acceptance gate. `acceptance` runs every criterion; `acceptance 2 4` runs a
// subset. One PASS/FAIL line per criterion; exit status 1 if any failed.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tibp/eval.hpp"
#include "tibp/io.hpp"
#include "tibp/likelihood.hpp"
#include "tibp/sampler.hpp"
#include "tibp/synth.hpp"
#include "tibp/xcorr.hpp"

using namespace tibp;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::shared_ptr<const Dataset> gray_dataset(std::vector<std::vector<double>> rows) {
  auto d = std::make_shared<Dataset>();
  for (auto& r : rows) {
    Image im(1, static_cast<int>(r.size()), 1);
    im.values = std::move(r);
    d->images.push_back(std::move(im));
  }
  d->channel_mean = {0.0};
  d->channel_stddev = {1.0};
  return d;
}

FeatureCanvas gray_canvas(std::vector<double> v) {
  FeatureCanvas c(1, static_cast<int>(v.size()), 1);
  c.values = std::move(v);
  return c;
}

double gauss_ll(const std::vector<double>& x, const std::vector<double>& mean, double sigma) {
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = x[i] - mean[i];
    ll += -0.5 * std::log(2.0 * kPi * sigma * sigma) - e * e / (2.0 * sigma * sigma);
  }
  return ll;
}

double total_variation(const std::map<int, double>& p, const std::map<int, double>& q) {
  std::map<int, double> all;
  for (auto [k, v] : p) all[k] += v;
  for (auto [k, v] : q) all[k] -= v;
  double tv = 0.0;
  for (auto [k, v] : all) tv += std::abs(v);
  return 0.5 * tv;
}

std::map<int, double> frequencies(const std::map<int, long>& counts) {
  long total = 0;
  for (auto [k, c] : counts) total += c;
  std::map<int, double> out;
  for (auto [k, c] : counts) out[k] = static_cast<double>(c) / total;
  return out;
}

// 1 -----------------------------------------------------------------------

Outcome fft_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int H = rng.uniform_int(1, 24), W = rng.uniform_int(1, 24);
    const int h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
    Raster x(H, W, 1), t(h, w, 1);
    for (double& v : x.values) v = rng.normal(0.0, 1.0);
    for (double& v : t.values) v = rng.normal(0.0, 1.0);
    const LagMap a = cross_correlate_full(x, t);
    const LagMap b = brute_force_cross_correlate(x, t);
    if (a.rows != b.rows || a.cols != b.cols || a.min_dy != b.min_dy || a.min_dx != b.min_dx) {
      return {false, fmt("lag windows differ on case %d", trial)};
    }
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < b.scores.size(); ++i) {
      scale = std::max(scale, std::abs(b.scores[i]));
      diff = std::max(diff, std::abs(a.scores[i] - b.scores[i]));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-300));
  }
  return {worst <= 1e-9, fmt("200 cases, worst relative error %.3g (limit 1e-9)", worst)};
}

// 2 -----------------------------------------------------------------------

Outcome exact_posterior() {
  const std::vector<std::vector<double>> xs{{0.9, 0.6, -0.1}, {0.2, 1.1, 0.4}};
  const std::vector<double> a{1.0, 0.5};
  const double sigma = 0.5;

  ModelConfig cfg;
  cfg.variant = Variant::lg_tibp;
  cfg.canvas_h = 1;
  cfg.canvas_w = 2;
  cfg.hyper.sigma_x = sigma;
  ModelState base = init_state(gray_dataset(xs), cfg);
  add_feature(base, gray_canvas(a));
  const int T = base.space.size();
  if (T != 4) return {false, fmt("expected 4 translations, got %d", T)};
  for (int n = 0; n < 2; ++n) {
    base.features[0].used[n] = 1;
    base.features[0].transforms[n] = base.space.identity();
  }

  // code per image: 0 = off, 1 + canonical transformation index
  auto code = [T](const ModelState& s) {
    int c = 0;
    for (int n = 0; n < 2; ++n) {
      const auto& f = s.features[0];
      c = c * (T + 1) + (f.used[n] ? 1 + s.space.index_of(f.transforms[n]) : 0);
    }
    return c;
  };

  // Enumerated target. With one shared column over two images the IBP prior
  // gives every non-empty z pattern the same mass; each active pair adds 1/T.
  std::map<int, double> exact;
  {
    std::vector<double> logw;
    std::vector<int> keys;
    for (int c0 = 0; c0 <= T; ++c0) {
      for (int c1 = 0; c1 <= T; ++c1) {
        if (c0 == 0 && c1 == 0) continue;
        double lw = 0.0;
        const int cs[2] = {c0, c1};
        for (int n = 0; n < 2; ++n) {
          std::vector<double> mean(3, 0.0);
          if (cs[n] > 0) {
            lw -= std::log(static_cast<double>(T));
            const int dx = cs[n] - 2;  // lags -1, 0, 1, 2
            for (int j = 0; j < 2; ++j) {
              if (dx + j >= 0 && dx + j < 3) mean[dx + j] += a[j];
            }
          }
          lw += gauss_ll(xs[n], mean, sigma);
        }
        logw.push_back(lw);
        keys.push_back(c0 * (T + 1) + c1);
      }
    }
    const double top = *std::max_element(logw.begin(), logw.end());
    double z = 0.0;
    for (double v : logw) z += std::exp(v - top);
    for (std::size_t i = 0; i < keys.size(); ++i) exact[keys[i]] = std::exp(logw[i] - top) / z;
  }

  const long steps = 200000;
  std::map<int, long> mh_counts, naive_counts;
  {
    ModelState s = base;
    Sampler sampler(s);
    Rng rng(11);
    for (long it = 0; it < steps; ++it) {
      for (int n = 0; n < 2; ++n) {
        if (s.usage_excluding(n, 0) > 0) sampler.mh_update_feature_use(s, n, 0, rng);
        if (s.uses(n, 0)) sampler.resample_transform_and_mask(s, n, 0, rng);
      }
      ++mh_counts[code(s)];
    }
  }
  {
    ModelState s = base;
    Sampler sampler(s);
    Rng rng(12);
    for (long it = 0; it < steps; ++it) {
      for (int n = 0; n < 2; ++n) {
        if (s.usage_excluding(n, 0) > 0) {
          sampler.naive_enumeration_update(s, n, 0, rng);
        } else {
          // z_n is pinned on; draw r_n from its enumerated conditional
          TransformationProposal cond;
          cond.prob = sampler.exact_transformation_conditional(s, n, 0);
          for (double p : cond.prob) cond.log_prob.push_back(std::log(p));
          s.features[0].transforms[n] = sample_transformation(cond, s.space, rng).first;
        }
      }
      ++naive_counts[code(s)];
    }
  }
  const double tv_exact = total_variation(frequencies(mh_counts), exact);
  const double tv_naive = total_variation(frequencies(mh_counts), frequencies(naive_counts));
  const double tv_naive_exact = total_variation(frequencies(naive_counts), exact);
  return {tv_exact <= 0.05 && tv_naive <= 0.05,
          fmt("TV(MH, exact) = %.4f, TV(MH, naive) = %.4f, TV(naive, exact) = %.4f over %ld steps "
              "(limit 0.05)",
              tv_exact, tv_naive, tv_naive_exact, steps)};
}

// 3 -----------------------------------------------------------------------

Outcome conjugate_updates() {
  const std::vector<std::vector<double>> xs{{0.3, 1.2, -0.4, 0.8}, {1.5, 0.1, 0.7, -0.2},
                                            {-0.6, 0.9, 1.1, 0.4}, {0.2, 0.2, 0.2, 0.2}};
  ModelConfig cfg;
  cfg.variant = Variant::lg_tibp;
  cfg.canvas_h = 1;
  cfg.canvas_w = 2;
  cfg.hyper.sigma_x = 0.7;
  cfg.hyper.sigma_a = 1.3;
  cfg.hyper.alpha_shape = 2.0;
  cfg.hyper.alpha_rate = 1.5;
  ModelState s = init_state(gray_dataset(xs), cfg);
  add_feature(s, gray_canvas({0.4, -0.3}));
  add_feature(s, gray_canvas({0.9, 0.1}));
  add_feature(s, gray_canvas({-0.5, 0.6}));
  auto set = [&](int n, int k, int dx) {
    s.features[k].used[n] = 1;
    s.features[k].transforms[n] = {dx, 0, 0, 0};
  };
  set(0, 0, 0);
  set(1, 0, 1);
  set(2, 0, 3);  // right pixel falls off the frame
  set(3, 0, -1);
  set(0, 1, 1);
  set(2, 1, 2);
  set(1, 2, 2);

  // Hand-computed conditional for canvas pixel d = 0 of feature 0.
  const int d = 0;
  double count = 0.0, sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (!s.uses(n, 0)) continue;
    const int e = s.features[0].transforms[n].dx + d;
    if (e < 0 || e >= 4) continue;
    double others = 0.0;
    for (int k = 1; k < 3; ++k) {
      if (!s.uses(n, k)) continue;
      const int j = e - s.features[k].transforms[n].dx;
      if (j >= 0 && j < 2) others += s.features[k].canvas.values[j];
    }
    count += 1.0;
    sum += xs[n][e] - others;
  }
  const double ix = 1.0 / (0.7 * 0.7), ia = 1.0 / (1.3 * 1.3);
  const double var = 1.0 / (ia + ix * count);
  const double mean = var * ix * sum;

  const int draws = 10000;
  Sampler sampler(s);
  Rng rng(31);
  double m1 = 0.0, m2 = 0.0;
  std::vector<double> v(draws);
  for (int i = 0; i < draws; ++i) v[i] = sampler.gibbs_feature_pixel(s, 0, d, 0, rng);
  for (double x : v) m1 += x;
  m1 /= draws;
  for (double x : v) m2 += (x - m1) * (x - m1);
  m2 /= draws - 1;
  const double z_mean = (m1 - mean) / std::sqrt(var / draws);
  const double z_var = (m2 - var) / (var * std::sqrt(2.0 / (draws - 1)));

  // alpha | Z ~ Gamma(2 + 3, 1.5 + H_4)
  const double shape = 2.0 + 3.0, rate = 1.5 + 25.0 / 12.0;
  const double amean = shape / rate, avar = shape / (rate * rate);
  sampler.options().sample_sigma_x = false;
  sampler.options().sample_sigma_a = false;
  double a1 = 0.0, a2 = 0.0;
  std::vector<double> al(draws);
  for (int i = 0; i < draws; ++i) al[i] = sampler.gibbs_hyperparameters(s, rng).alpha;
  for (double x : al) a1 += x;
  a1 /= draws;
  for (double x : al) a2 += (x - a1) * (x - a1);
  a2 /= draws - 1;
  const double z_amean = (a1 - amean) / std::sqrt(avar / draws);
  const double z_avar = (a2 - avar) / (avar * std::sqrt((2.0 + 6.0 / shape) / draws));

  const bool pass = std::abs(z_mean) <= 4 && std::abs(z_var) <= 4 && std::abs(z_amean) <= 4 &&
                    std::abs(z_avar) <= 4;
  return {pass, fmt("feature pixel mean z=%.2f var z=%.2f; alpha mean z=%.2f var z=%.2f "
                    "(%d draws, limit 4 SE)",
                    z_mean, z_var, z_amean, z_avar, draws)};
}

// 4 -----------------------------------------------------------------------

Outcome mask_stationarity() {
  const std::vector<std::vector<double>> xs{{0.6}, {0.3}};
  const double a = 0.5, sigma = 0.5, beta = 1.0;
  ModelConfig cfg;
  cfg.variant = Variant::m_tibp;
  cfg.canvas_h = cfg.canvas_w = 1;
  cfg.hyper.sigma_x = sigma;
  cfg.hyper.beta = beta;
  ModelState s = init_state(gray_dataset(xs), cfg);
  add_feature(s, gray_canvas({a}));
  for (int n = 0; n < 2; ++n) {
    s.features[0].used[n] = 1;
    s.features[0].transforms[n] = s.space.identity();
    s.features[0].masks[n] = BitGrid(1, 1, 1);
  }

  // Collapsed Beta-Bernoulli prior over (s_0, s_1) times the pixel likelihoods;
  // a masked-off pixel shows the zero background.
  std::map<int, double> exact;
  double z = 0.0;
  for (int code = 0; code < 4; ++code) {
    const int s0 = code >> 1, s1 = code & 1, m = s0 + s1;
    const double lp = std::lgamma(beta + m) + std::lgamma(beta + 2 - m) - std::lgamma(2 * beta + 2) -
                      (2 * std::lgamma(beta) - std::lgamma(2 * beta));
    const double w = std::exp(lp + gauss_ll(xs[0], {s0 * a}, sigma) + gauss_ll(xs[1], {s1 * a}, sigma));
    exact[code] = w;
    z += w;
  }
  for (auto& [k, v] : exact) v /= z;

  Sampler sampler(s);
  Rng rng(41);
  const long steps = 100000;
  std::map<int, long> counts;
  for (long it = 0; it < steps; ++it) {
    for (int n = 0; n < 2; ++n) sampler.gibbs_mask_pixel(s, n, 0, 0, rng);
    ++counts[s.features[0].masks[0][0] * 2 + s.features[0].masks[1][0]];
  }
  const double tv = total_variation(frequencies(counts), exact);
  return {tv <= 0.02, fmt("TV = %.4f over %ld steps (limit 0.02)", tv, steps)};
}

// 5, 6, 8 -------------------------------------------------------------------

// Linear-Gaussian models see per-channel standardized data; the masked model
// sees raw intensities so that its zero background means "no feature".
// Everything is scored in the standardized units.
struct Fitted {
  ModelState state;
  Dataset model_units;
};

Dataset raw_units(const Dataset& raw) {
  Dataset d = raw;
  d.channel_mean.assign(raw.channels(), 0.0);
  d.channel_stddev.assign(raw.channels(), 1.0);
  return d;
}

Fitted fit(Variant v, const Dataset& raw, const Dataset& normalized, const SynthSpec& spec, int sweeps,
           std::uint64_t seed) {
  Fitted out;
  out.model_units = v == Variant::m_tibp ? raw_units(raw) : normalized;
  ModelConfig cfg;
  cfg.variant = v;
  cfg.canvas_h = cfg.canvas_w = v == Variant::ibp_lg ? 0 : 5;
  cfg.rotations = spec.rotations;
  cfg.scales = spec.scales;
  cfg.seed = seed;
  out.state = init_state(std::make_shared<const Dataset>(out.model_units), cfg);
  Sampler sampler(out.state);
  run_chain(out.state, sampler, sweeps);
  return out;
}

Outcome recovery(const SynthSpec& spec, double match_limit, std::uint64_t seed) {
  Rng rng(seed);
  auto [raw, truth] = generate_synthetic_dataset(spec, rng);
  const Dataset normalized = normalize_dataset(raw);
  const auto true_glyphs = normalized_truth(truth, normalized);

  std::map<Variant, double> rmse;
  std::ostringstream detail;
  bool pass = true;
  for (Variant v : {Variant::ibp_lg, Variant::lg_tibp, Variant::m_tibp}) {
    const auto t0 = std::chrono::steady_clock::now();
    Fitted f = fit(v, raw, normalized, spec, 100, seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rmse[v] = training_rmse(f.state, &normalized);
    detail << to_string(v) << ": K+=" << f.state.num_features() << " rmse=" << fmt("%.3f", rmse[v]);
    if (v != Variant::ibp_lg) {
      const int K = f.state.num_features();
      const bool k_ok = K >= 4 && K <= 8;
      double worst = std::numeric_limits<double>::infinity();
      std::string per;
      if (K > 0) {
        const MatchResult m =
            feature_match_score(learned_appearances(f.state, &normalized), true_glyphs, truth.space);
        worst = *std::max_element(m.matched_rmse.begin(), m.matched_rmse.end());
        for (double r : m.matched_rmse) per += fmt(" %.3f", r);
      }
      pass = pass && k_ok && worst < match_limit;
      detail << " matched=[" << per << " ]";
    }
    detail << fmt(" (%.0fs); ", secs);
  }
  const double ratio_lg = rmse[Variant::lg_tibp] / rmse[Variant::ibp_lg];
  const double ratio_m = rmse[Variant::m_tibp] / rmse[Variant::ibp_lg];
  pass = pass && ratio_lg < 0.5 && ratio_m < 0.5;
  detail << fmt("rmse ratio vs ibp-lg: lg-tibp %.3f, m-tibp %.3f (limits: 4<=K+<=8, matched < %.2f, "
                "ratio < 0.5)",
                ratio_lg, ratio_m, match_limit);
  return {pass, detail.str()};
}

Outcome recovery_translation() {
  SynthSpec spec;
  spec.height = spec.width = 9;
  return recovery(spec, 0.15, 5);
}

Outcome recovery_rotation_scale() {
  SynthSpec spec;
  spec.height = spec.width = 15;
  spec.rotations = {0.0, kPi / 2, kPi, 3 * kPi / 2};
  spec.scales = {0.5, 1.0, 2.0};
  return recovery(spec, 0.2, 6);
}

Outcome held_out() {
  SynthSpec spec;
  Rng rng(8);
  auto [raw, truth] = generate_synthetic_dataset(spec, rng);
  const auto [train_idx, test_idx] = split_indices(raw.size(), 0.8, rng);
  const Dataset train_raw = subset(raw, train_idx);
  const Dataset normalized = normalize_dataset(train_raw);

  std::map<Variant, double> rmse;
  std::ostringstream detail;
  for (Variant v : {Variant::ibp_lg, Variant::lg_tibp, Variant::m_tibp}) {
    Fitted f = fit(v, train_raw, normalized, spec, 100, 8);
    Rng test_rng(80);
    double ss = 0.0;
    for (int i : test_idx) {
      const Image x = v == Variant::m_tibp ? raw.images[i] : normalize_with(raw.images[i], normalized);
      const Reconstruction rec = reconstruct_test_image(f.state, x, 20, test_rng);
      const double e = per_pixel_rmse(convert_units(rec.image, f.model_units, normalized),
                                      convert_units(x, f.model_units, normalized));
      ss += e * e;
    }
    rmse[v] = std::sqrt(ss / test_idx.size());
    detail << to_string(v) << fmt(" test rmse %.4f (K+=%d); ", rmse[v], f.state.num_features());
  }
  const bool pass = rmse[Variant::lg_tibp] < rmse[Variant::ibp_lg] && rmse[Variant::m_tibp] < rmse[Variant::ibp_lg];
  detail << fmt("%zu train / %zu test images", train_idx.size(), test_idx.size());
  return {pass, detail.str()};
}

// 7 -----------------------------------------------------------------------

Outcome speedup() {
  BenchmarkOptions opts;
  opts.sizes = {9, 15};
  opts.iterations = 100;
  const auto rows = run_benchmark(opts);
  std::map<std::pair<std::string, int>, double> secs;
  std::map<std::pair<std::string, int>, BenchmarkRow> last;
  for (const auto& r : rows) {
    secs[{r.sampler, r.image_size}] += r.seconds / opts.iterations;
    last[{r.sampler, r.image_size}] = r;
  }
  const double mh9 = secs[{"mh", 81}], nv9 = secs[{"naive", 81}];
  const double mh15 = secs[{"mh", 225}], nv15 = secs[{"naive", 225}];
  const double ratio9 = nv9 / mh9, ratio15 = nv15 / mh15;
  const double lj_mh = last[{"mh", 81}].log_joint, lj_nv = last[{"naive", 81}].log_joint;
  const double gap = std::abs(lj_mh - lj_nv) / std::max(std::abs(lj_mh), std::abs(lj_nv));
  const bool pass = mh9 < nv9 && mh15 < nv15 && ratio15 > ratio9 && gap <= 0.05;
  return {pass, fmt("per-iteration s: D=81 mh %.4f naive %.4f (x%.1f); D=225 mh %.4f naive %.4f "
                    "(x%.1f); final log joint at D=81 mh %.1f naive %.1f (gap %.2f%%, limit 5%%)",
                    mh9, nv9, ratio9, mh15, nv15, ratio15, lj_mh, lj_nv, 100 * gap)};
}

// 9 -----------------------------------------------------------------------

Outcome determinism() {
  SynthSpec spec;
  Rng rng(9);
  auto [raw, truth] = generate_synthetic_dataset(spec, rng);
  const auto data = std::make_shared<const Dataset>(normalize_dataset(raw));
  std::ostringstream detail;
  bool pass = true;
  for (Variant v : {Variant::ibp_lg, Variant::lg_tibp, Variant::m_tibp}) {
    std::string trace[2], bytes[2];
    for (int run = 0; run < 2; ++run) {
      ModelConfig cfg;
      cfg.variant = v;
      cfg.canvas_h = cfg.canvas_w = v == Variant::ibp_lg ? 0 : 5;
      cfg.seed = 99;
      ModelState s = init_state(data, cfg);
      Sampler sampler(s);
      std::ostringstream t;
      run_chain(s, sampler, 20, [&](const SweepReport& r, const ModelState& st) {
        t << fmt("%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.num_features, r.log_joint,
                 r.log_likelihood, st.hyper.alpha, st.hyper.sigma_x, st.hyper.sigma_a);
      });
      trace[run] = t.str();
      bytes[run] = serialize_checkpoint(s);
    }
    const bool same = trace[0] == trace[1] && bytes[0] == bytes[1];
    pass = pass && same;
    detail << to_string(v) << (same ? " identical" : " DIFFERS") << fmt(" (%zu checkpoint bytes); ", bytes[0].size());
  }
  detail << "20 sweeps per run";
  return {pass, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"FFT cross-correlation matches brute force", fft_oracle},
      {"MH and naive samplers match the enumerated posterior", exact_posterior},
      {"conjugate feature and alpha updates", conjugate_updates},
      {"mask Gibbs stationarity", mask_stationarity},
      {"9x9 translation-only recovery", recovery_translation},
      {"15x15 rotation and scale recovery", recovery_rotation_scale},
      {"MH speed-up over naive enumeration", speedup},
      {"held-out reconstruction ordering", held_out},
      {"determinism", determinism},
  };
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty()) {
    for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) which.push_back(i);
  }
  int failed = 0;
  for (int id : which) {
    if (id < 1 || id > static_cast<int>(criteria.size())) {
      std::printf("criterion %d: unknown\n", id);
      return 2;
    }
    Outcome o;
    try {
      o = criteria[id - 1].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %d %s: %s | %s\n", id, o.pass ? "PASS" : "FAIL", criteria[id - 1].first,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
