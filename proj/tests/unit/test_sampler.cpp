#include <doctest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "tibp/error.hpp"
#include "tibp/likelihood.hpp"
#include "tibp/sampler.hpp"

using namespace tibp;

namespace {

ModelState make_state(Variant v, std::vector<Image> images, int canvas_h = 0, int canvas_w = 0) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.canvas_h = canvas_h;
  cfg.canvas_w = canvas_w;
  return init_state(th::dataset(std::move(images)), cfg);
}

void use(ModelState& s, int n, int k, Transformation t = {}) {
  auto& f = s.features[k];
  f.used[n] = 1;
  f.transforms[n] = t;
  if (s.masked()) f.masks[n] = BitGrid(f.canvas.height, f.canvas.width, 1);
}

}  // namespace

TEST_CASE("small helpers") {
  CHECK(harmonic_number(1) == 1.0);
  CHECK(harmonic_number(3) == doctest::Approx(11.0 / 6));
  CHECK(acceptance_probability(0.5) == 1.0);
  CHECK(acceptance_probability(std::log(0.25)) == doctest::Approx(0.25));
  CHECK(acceptance_probability(-1e6) == 0.0);
}

TEST_CASE("alpha posterior") {
  auto s = make_state(Variant::lg_tibp, {th::row({0, 0})});
  add_feature(s, th::row({1, 1}));
  add_feature(s, th::row({1, 1}));
  use(s, 0, 0);
  use(s, 0, 1);
  auto [shape, rate] = alpha_posterior(s);
  CHECK(shape == 3.0);
  CHECK(rate == 2.0);
  CHECK(shape / rate == 1.5);

  auto empty = make_state(Variant::lg_tibp, {th::row({0}), th::row({0})});
  std::tie(shape, rate) = alpha_posterior(empty);
  CHECK(shape == 1.0);
  CHECK(rate == doctest::Approx(2.5));
}

TEST_CASE("mask proposal probability") {
  std::vector<Image> imgs(4, th::row({0}));
  auto s = make_state(Variant::m_tibp, imgs);
  add_feature(s, th::row({1}));
  for (int n = 1; n < 4; ++n) use(s, n, 0);
  s.features[0].masks[3][0] = 0;
  CHECK(mask_proposal_probability(s, 0, 0, 0) == doctest::Approx(0.6));

  auto lone = make_state(Variant::m_tibp, {th::row({0})});
  add_feature(lone, th::row({1}));
  use(lone, 0, 0);
  lone.hyper.beta = 7.3;
  CHECK(mask_proposal_probability(lone, 0, 0, 0) == 0.5);

  s.features[0].masks[3][0] = 1;
  s.hyper.beta = 1e-9;
  CHECK(mask_proposal_probability(s, 0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("feature posterior closed form") {
  auto s = make_state(Variant::m_tibp, {th::row({2})});
  add_feature(s, th::row({0}));
  use(s, 0, 0);
  auto st = feature_posterior_stats(s, 0);
  CHECK(st.variance[0] == 0.5);
  CHECK(st.mean[0] == 1.0);

  auto lg = make_state(Variant::lg_tibp, {th::row({2})});
  add_feature(lg, th::row({0}));
  use(lg, 0, 0);
  st = feature_posterior_stats(lg, 0);
  CHECK(st.variance[0] == 0.5);
  CHECK(st.mean[0] == 1.0);

  lg.features[0].used[0] = 0;
  st = feature_posterior_stats(lg, 0);
  CHECK(st.variance[0] == 1.0);
  CHECK(st.mean[0] == 0.0);

  // many copies of v: posterior concentrates at v
  std::vector<Image> many(400, th::row({0.7}));
  auto big = make_state(Variant::lg_tibp, many);
  add_feature(big, th::row({0}));
  for (int n = 0; n < 400; ++n) use(big, n, 0);
  st = feature_posterior_stats(big, 0);
  CHECK(st.mean[0] == doctest::Approx(0.7).epsilon(0.01));
  CHECK(st.variance[0] < 0.01);
}

TEST_CASE("lg feature statistics use the residual of the other features") {
  auto s = make_state(Variant::lg_tibp, {th::row({3, 1, 0})}, 1, 2);
  add_feature(s, th::row({0, 0}));
  add_feature(s, th::row({1, 1}));
  use(s, 0, 0);
  use(s, 0, 1, {1, 0, 0, 0});
  const auto st = feature_posterior_stats(s, 0);
  // residual = x - [0, 1, 1] = [3, 0, -1]; feature 0 sits on pixels 0, 1
  CHECK(st.data_sum[0] == 3.0);
  CHECK(st.data_sum[1] == 0.0);
}

TEST_CASE("flip acceptance follows the prior ratio when likelihoods tie") {
  std::vector<Image> imgs(4, th::row({0, 0, 0}));
  auto s = make_state(Variant::lg_tibp, imgs, 1, 1);
  add_feature(s, th::row({0}));
  for (int n = 1; n < 4; ++n) use(s, n, 0);
  Sampler sampler(s);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    s.features[0].used[0] = 0;
    s.features[0].transforms[0] = s.space.identity();
    CHECK(sampler.mh_update_feature_use(s, 0, 0, rng));
  }
  // reverse move: ratio 1/3
  int off = 0;
  const int trials = 30000;
  for (int i = 0; i < trials; ++i) {
    use(s, 0, 0);
    if (sampler.mh_update_feature_use(s, 0, 0, rng)) ++off;
  }
  const double p = off / double(trials);
  CHECK(std::abs(p - 1.0 / 3) < 4 * std::sqrt((1.0 / 3) * (2.0 / 3) / trials));

  auto lone = make_state(Variant::lg_tibp, imgs, 1, 1);
  add_feature(lone, th::row({0}));
  Sampler ls(lone);
  CHECK_THROWS_AS(ls.mh_update_feature_use(lone, 0, 0, rng), Error);
}

TEST_CASE("flip rejects a feature that ruins the fit") {
  auto s = make_state(Variant::lg_tibp, {th::row({0}), th::row({0})});
  add_feature(s, th::row({50}));
  use(s, 1, 0);
  Sampler sampler(s);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) CHECK_FALSE(sampler.mh_update_feature_use(s, 0, 0, rng));
}

TEST_CASE("resampling over a single transformation always accepts") {
  auto s = make_state(Variant::ibp_lg, {th::row({1, 2})});
  add_feature(s, th::row({0.3, 0.1}));
  use(s, 0, 0);
  Sampler sampler(s);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) CHECK(sampler.resample_transform_and_mask(s, 0, 0, rng));
}

TEST_CASE("mask gibbs conditional") {
  auto s = make_state(Variant::m_tibp, {th::grid(1, 1, {2, 2}, 2)});
  add_feature(s, th::grid(1, 1, {2, 2}, 2));
  use(s, 0, 0);
  Sampler sampler(s);
  Rng rng(8);
  const int trials = 40000;
  int zeros = 0;
  for (int i = 0; i < trials; ++i) zeros += sampler.gibbs_mask_pixel(s, 0, 0, 0, rng) == 0;
  const double want = std::exp(-4.0) / (1 + std::exp(-4.0));
  CHECK(want == doctest::Approx(0.0180).epsilon(0.01));
  CHECK(std::abs(zeros / double(trials) - want) < 4 * std::sqrt(want * (1 - want) / trials));

  // identical likelihoods: posterior equals the beta-bernoulli prior
  std::vector<Image> imgs(4, th::row({0}));
  auto t = make_state(Variant::m_tibp, imgs);
  add_feature(t, th::row({0}));
  for (int n = 0; n < 4; ++n) use(t, n, 0);
  t.features[0].masks[3][0] = 0;
  Sampler ts(t);
  int ones = 0;
  for (int i = 0; i < trials; ++i) ones += ts.gibbs_mask_pixel(t, 0, 0, 0, rng);
  CHECK(std::abs(ones / double(trials) - 0.6) < 4 * std::sqrt(0.24 / trials));
}

TEST_CASE("order swaps") {
  auto s = make_state(Variant::m_tibp, {th::row({1, 0}), th::row({0, 1})});
  add_feature(s, th::row({1, 5}));
  add_feature(s, th::row({5, 1}));
  use(s, 0, 0);
  use(s, 1, 1);
  Sampler sampler(s);
  Rng rng(3);
  for (int i = 0; i < 10; ++i) CHECK(sampler.mh_swap_adjacent_order(s, rng));

  // B in front hides a perfect A; swapping uncovers it
  auto u = make_state(Variant::m_tibp, {th::row({1, 2})});
  add_feature(u, th::row({1, 2}));
  add_feature(u, th::row({9, 9}));
  use(u, 0, 0);
  use(u, 0, 1);
  u.features[1].rank = 2;
  u.features[0].rank = 1;
  Sampler us(u);
  CHECK(us.mh_swap_adjacent_order(u, rng));
  CHECK(u.features[0].rank == 2);
  CHECK(compose_image(u, 0).values == std::vector<double>{1, 2});
}

TEST_CASE("exact transformation conditional matches direct enumeration") {
  Rng rng(12);
  Image x(3, 4, 2);
  for (double& v : x.values) v = rng.normal(0, 1);
  auto s = make_state(Variant::lg_tibp, {x}, 2, 2);
  FeatureCanvas a(2, 2, 2), b(2, 2, 2);
  for (double& v : a.values) v = rng.normal(0, 1);
  for (double& v : b.values) v = rng.normal(0, 1);
  add_feature(s, a);
  add_feature(s, b);
  use(s, 0, 0);
  use(s, 0, 1, {1, 1, 0, 0});
  s.hyper.sigma_x = 0.7;
  Sampler sampler(s);
  const auto p = sampler.exact_transformation_conditional(s, 0, 0);
  std::vector<double> w;
  double z = 0;
  const auto other = render_feature(b, {1, 1, 0, 0}, s.space).values;
  for (const auto& t : enumerate_transformations(s.space)) {
    const auto r = render_feature(a, t, s.space).values;
    double ss = 0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      const double e = x.values[i] - r.values[i] - other.values[i];
      ss += e * e;
    }
    w.push_back(std::exp(-ss / (2 * 0.49)));
    z += w.back();
  }
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(p[i] - w[i] / z) < 1e-10);
}

TEST_CASE("hyperparameter conditionals") {
  auto s = make_state(Variant::lg_tibp, {th::row({0, 0})});
  s.hyper.noise_shape = 1e7;
  s.hyper.noise_scale = 1e7 * 0.25;
  SamplerOptions opts;
  opts.sample_alpha = opts.sample_sigma_a = false;
  Sampler sampler(s, opts);
  Rng rng(1);
  const auto h = sampler.gibbs_hyperparameters(s, rng);
  CHECK(h.sigma_x * h.sigma_x == doctest::Approx(0.25 * 1e7 / (1e7 + 1)).epsilon(1e-3));
  CHECK(h.alpha == 1.0);
  for (int i = 0; i < 100; ++i) {
    const auto g = Sampler(s).gibbs_hyperparameters(s, rng);
    CHECK(g.alpha > 0);
    CHECK(g.sigma_x > 0);
    CHECK(g.sigma_a > 0);
  }
}

TEST_CASE("births and deaths") {
  auto s = make_state(Variant::lg_tibp, {th::row({0, 0, 0})}, 1, 1);
  s.hyper.alpha = 1e-12;
  Sampler sampler(s);
  Rng rng(5);
  const auto before = s;
  CHECK(sampler.mh_birth_new_features(s, 0, rng) == 0);
  CHECK(s.num_features() == 0);

  // a strong unexplained blob is picked up by the conditional birth
  auto blob = make_state(Variant::lg_tibp, {th::row({0, 6, 0})}, 1, 1);
  blob.hyper.alpha = 3.0;
  blob.hyper.sigma_x = 0.5;
  Sampler bs(blob);
  int born = 0;
  for (int i = 0; i < 50 && born == 0; ++i) born = bs.mh_birth_new_features(blob, 0, rng);
  REQUIRE(born > 0);
  CHECK(blob.features.back().used[0] == 1);

  // a singleton that explains nothing dies
  auto dead = make_state(Variant::lg_tibp, {th::row({0, 0, 0})}, 1, 1);
  add_feature(dead, th::row({0}));
  use(dead, 0, 0);
  dead.hyper.alpha = 0.01;
  Sampler ds(dead);
  bool died = false;
  for (int i = 0; i < 50 && !died; ++i) died = ds.mh_death_singleton(dead, 0, 0, rng);
  CHECK(died);
  CHECK(dead.features[0].used[0] == 0);
}

TEST_CASE("sweeps are deterministic and keep the state valid") {
  Rng rng(3);
  std::vector<Image> imgs;
  for (int n = 0; n < 6; ++n) {
    Image x(4, 4, 3);
    for (double& v : x.values) v = rng.normal(0, 1);
    imgs.push_back(x);
  }
  for (Variant v : {Variant::ibp_lg, Variant::lg_tibp, Variant::m_tibp}) {
    auto a = make_state(v, imgs, v == Variant::ibp_lg ? 0 : 2, v == Variant::ibp_lg ? 0 : 2);
    auto b = a;
    Sampler sa(a), sb(b);
    for (int i = 0; i < 8; ++i) {
      const auto ra = sa.sweep(a);
      const auto rb = sb.sweep(b);
      CHECK(ra.log_joint == rb.log_joint);
      CHECK(ra.num_features == a.num_features());
      CHECK_NOTHROW(a.validate());
    }
    CHECK(a.same_as(b));
  }
  auto m = make_state(Variant::m_tibp, imgs, 2, 2);
  Sampler ms(m);
  CHECK_THROWS_AS(ms.naive_sweep(m), Error);
}

TEST_CASE("pure noise with tiny alpha stays empty") {
  Rng rng(6);
  std::vector<Image> imgs;
  for (int n = 0; n < 10; ++n) {
    Image x(3, 3, 1);
    for (double& v : x.values) v = rng.normal(0, 1);
    imgs.push_back(x);
  }
  auto s = make_state(Variant::lg_tibp, imgs, 2, 2);
  s.hyper.alpha = 1e-8;
  SamplerOptions opts;
  opts.sample_alpha = false;
  Sampler sampler(s, opts);
  for (int i = 0; i < 10; ++i) sampler.sweep(s);
  CHECK(s.num_features() == 0);
}
