#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "helpers.hpp"
#include "tibp/error.hpp"
#include "tibp/eval.hpp"
#include "tibp/likelihood.hpp"

using namespace tibp;

TEST_CASE("rmse") {
  const auto a = th::row({1, 2, 3});
  CHECK(per_pixel_rmse(a, a) == 0.0);
  CHECK(per_pixel_rmse(th::row({2, 3, 4}), a) == 1.0);
  CHECK_THROWS_AS(per_pixel_rmse(th::row({1}), a), Error);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    Image x(2, 3, 2), y(2, 3, 2), z(2, 3, 2);
    for (auto* im : {&x, &y, &z}) {
      for (double& v : im->values) v = rng.normal(0, 1);
    }
    CHECK(per_pixel_rmse(x, z) <= per_pixel_rmse(x, y) + per_pixel_rmse(y, z) + 1e-12);
  }
}

TEST_CASE("hungarian equals brute force") {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const int rows = rng.uniform_int(1, 5), cols = rng.uniform_int(1, 5);
    std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
    for (auto& r : cost) {
      for (double& v : r) v = rng.uniform();
    }
    const auto a = hungarian(cost);
    double got = 0;
    std::vector<int> used;
    for (int i = 0; i < rows; ++i) {
      if (a[i] >= 0) {
        got += cost[i][a[i]];
        used.push_back(a[i]);
      }
    }
    CHECK(static_cast<int>(used.size()) == std::min(rows, cols));
    std::sort(used.begin(), used.end());
    CHECK(std::adjacent_find(used.begin(), used.end()) == used.end());
    double best = 1e300;
    std::vector<int> perm(std::max(rows, cols));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      double s = 0;
      for (int i = 0; i < rows; ++i) {
        if (perm[i] < cols) s += cost[i][perm[i]];
      }
      int assigned = 0;
      for (int i = 0; i < rows; ++i) assigned += perm[i] < cols;
      if (assigned == std::min(rows, cols)) best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best));
  }
}

TEST_CASE("feature matching") {
  TransformationSpace sp(6, 6, 3, 3, {0, 1.5707963267948966});
  FeatureCanvas t1(3, 3, 1), t2(3, 3, 1);
  t1.values = {1, 0, 0, 1, 0, 0, 1, 1, 1};
  t2.values = {0, 2, 0, 2, 2, 2, 0, 2, 0};
  // learned t1 sits one pixel to the right on a 3x3 canvas and is rotated
  FeatureCanvas shifted(3, 3, 1);
  shifted.values = {0, 1, 0, 0, 1, 0, 0, 1, 1};
  auto r = feature_match_score({t1, t2}, {t1, t2}, sp);
  CHECK(r.mean_rmse == 0.0);
  CHECK(r.assignment == std::vector<int>{0, 1});
  r = feature_match_score({t2, t1}, {t1, t2}, sp);
  CHECK(r.mean_rmse == 0.0);
  CHECK(r.assignment == std::vector<int>{1, 0});

  const double partial = match_cost(shifted, t1, sp);
  CHECK(partial > 0.0);
  const auto turned = rotate_scale_canvas(t2, 1.5707963267948966, 1.0);
  CHECK(match_cost(turned, t2, sp) == 0.0);

  FeatureCanvas avg(3, 3, 1);
  for (int i = 0; i < 9; ++i) avg.values[i] = 0.5 * (t1.values[i] + t2.values[i]);
  r = feature_match_score({avg}, {t1, t2}, sp);
  const double c1 = match_cost(avg, t1, sp), c2 = match_cost(avg, t2, sp);
  const int pick = c1 <= c2 ? 0 : 1;
  CHECK(r.assignment[pick] == 0);
  CHECK(r.matched_rmse[pick] == doctest::Approx(std::min(c1, c2)));
  CHECK(r.matched_rmse[pick] > 0.0);
  // a true feature left without a partner cannot count as recovered
  CHECK(std::isinf(r.matched_rmse[1 - pick]));
  CHECK(std::isinf(r.mean_rmse));

  r = feature_match_score({t1, t2, avg}, {t1, t2}, sp);
  CHECK(r.unmatched_learned == std::vector<int>{2});
}

TEST_CASE("split") {
  Rng a(4), b(4);
  const auto [train, test] = split_indices(10, 0.8, a);
  CHECK(train.size() == 8);
  CHECK(test.size() == 2);
  std::vector<int> all = train;
  all.insert(all.end(), test.begin(), test.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 10; ++i) CHECK(all[i] == i);
  CHECK(split_indices(10, 0.8, b).first == train);
}

TEST_CASE("reconstruction") {
  Rng rng(6);
  auto data = th::dataset({th::row({1, 2, 0}), th::row({0, 1, 2})});
  ModelConfig cfg;
  cfg.canvas_h = 1;
  cfg.canvas_w = 2;
  auto s = init_state(data, cfg);
  s.hyper.sigma_x = 0.05;
  CHECK(reconstruct_test_image(s, th::row({4, 4, 4}), 3, rng).image.values == std::vector<double>{0, 0, 0});

  add_feature(s, th::row({1, 2}));
  for (int n = 0; n < 2; ++n) s.features[0].used[n] = 1;
  s.features[0].transforms[1] = {1, 0, 0, 0};
  const auto rec = reconstruct_test_image(s, th::row({0, 1, 2}), 10, rng);
  CHECK(per_pixel_rmse(rec.image, th::row({0, 1, 2})) < 0.05);
  CHECK(rec.z[0] == 1);

  Rng r1(9), r2(9);
  CHECK(reconstruct_test_image(s, th::row({1, 1, 1}), 5, r1).image ==
        reconstruct_test_image(s, th::row({1, 1, 1}), 5, r2).image);
  CHECK_THROWS_AS(reconstruct_test_image(s, th::row({1, 1}), 1, rng), Error);
}

TEST_CASE("unit conversion") {
  Dataset from, to;
  from.channel_mean = {0};
  from.channel_stddev = {1};
  to.channel_mean = {1};
  to.channel_stddev = {2};
  CHECK(convert_units(th::row({3, 1}), from, to).values == std::vector<double>{1, 0});
}

TEST_CASE("benchmark rows") {
  BenchmarkOptions opts;
  opts.sizes = {6};
  opts.iterations = 1;
  opts.n_images = 5;
  const auto rows = run_benchmark(opts);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.seconds > 0);
    CHECK(r.image_size == 36);
    CHECK(r.iteration == 1);
  }
  std::ostringstream out;
  write_benchmark_csv(out, rows);
  CHECK(out.str().rfind("sampler,image_size,num_features,seconds,log_joint,iteration\n", 0) == 0);
  opts.samplers = {"gibbs"};
  CHECK_THROWS_AS(run_benchmark(opts), Error);
}
