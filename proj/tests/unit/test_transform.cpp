#include <doctest.h>

#include <numbers>
#include <set>

#include "helpers.hpp"
#include "tibp/error.hpp"
#include "tibp/transform.hpp"

using namespace tibp;
constexpr double kPi = std::numbers::pi;

TEST_CASE("space size counts every lag") {
  CHECK(TransformationSpace(3, 3, 2, 2).size() == 16);
  CHECK(TransformationSpace(3, 3, 2, 2, {0, kPi / 2, kPi, 3 * kPi / 2}).size() == 64);
  CHECK(TransformationSpace(1, 1, 1, 1, {0}, {1}, false).size() == 1);
}

TEST_CASE("enumeration is canonical and indexable") {
  TransformationSpace sp(4, 5, 2, 3, {0, kPi / 2}, {0.5, 1.0});
  const auto all = enumerate_transformations(sp);
  REQUIRE(static_cast<int>(all.size()) == sp.size());
  std::set<std::tuple<int, int, int, int>> seen;
  for (int i = 0; i < sp.size(); ++i) {
    CHECK(sp.index_of(all[i]) == i);
    CHECK(sp.at(i) == all[i]);
    seen.insert({all[i].dx, all[i].dy, all[i].rotation, all[i].scale});
  }
  CHECK(static_cast<int>(seen.size()) == sp.size());
  CHECK(sp.contains(sp.identity()));
  // scale-major, then rotation
  CHECK(all.front().scale == 0);
  CHECK(all.back().scale == 1);
  CHECK(all.back().rotation == 1);
  // first lag of the first pair is the most negative one, row-major
  CHECK(all[0].dy == -sp.pairs()[0].map.height + 1);
  CHECK(all[1].dx == all[0].dx + 1);
}

TEST_CASE("space without rotation 0 or scale 1 is rejected") {
  CHECK_THROWS_AS(TransformationSpace(3, 3, 2, 2, {kPi / 2}), Error);
  CHECK_THROWS_AS(TransformationSpace(3, 3, 2, 2, {0}, {2.0}), Error);
  CHECK_THROWS_AS(TransformationSpace(3, 3, 4, 2), Error);
}

TEST_CASE("rotate and scale canvases") {
  const FeatureCanvas ab = th::grid(2, 1, {1, 2});
  CHECK(rotate_scale_canvas(ab, 0, 1) == ab);
  const auto r = rotate_scale_canvas(ab, kPi / 2, 1);
  CHECK(r.height == 1);
  CHECK(r.width == 2);
  CHECK(r.values == std::vector<double>{2, 1});

  const auto s = rotate_scale_canvas(th::grid(2, 2, {7, 8, 9, 10}), 0, 0.5);
  CHECK(s.height == 1);
  CHECK(s.values == std::vector<double>{7});

  FeatureCanvas c = th::grid(2, 3, {1, 2, 3, 4, 5, 6}, 1);
  FeatureCanvas turned = c;
  for (int i = 0; i < 4; ++i) turned = rotate_scale_canvas(turned, kPi / 2, 1);
  CHECK(turned == c);

  const auto big = rotate_scale_canvas(th::grid(1, 2, {1, 2}), 0, 2);
  CHECK(big.height == 2);
  CHECK(big.values == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2});
}

TEST_CASE("render places and clips") {
  TransformationSpace sp(1, 3, 1, 1);
  auto r = render_feature(th::row({5}), {1, 0, 0, 0}, sp);
  CHECK(r.values.values == std::vector<double>{0, 5, 0});
  CHECK(r.support.bits == std::vector<std::uint8_t>{0, 1, 0});

  TransformationSpace sp2(1, 3, 1, 2);
  r = render_feature(th::row({1, 2}), {-1, 0, 0, 0}, sp2);
  CHECK(r.values.values == std::vector<double>{2, 0, 0});

  TransformationSpace full(2, 2, 2, 2);
  const auto canvas = th::grid(2, 2, {1, 2, 3, 4});
  CHECK(render_feature(canvas, full.identity(), full).values == canvas);
}

TEST_CASE("inverse pixel map") {
  TransformationSpace sp(1, 3, 1, 2);
  CHECK(inverse_pixel_map(sp, sp.identity(), 0, 1) == 1);
  CHECK(inverse_pixel_map(sp, {1, 0, 0, 0}, 0, 2) == 1);
  CHECK_FALSE(inverse_pixel_map(sp, {1, 0, 0, 0}, 0, 0).has_value());
}

TEST_CASE("render agrees with inverse map on rotated and scaled placements") {
  TransformationSpace sp(6, 7, 3, 2, {0, kPi / 2, kPi, 3 * kPi / 2}, {0.5, 1, 2});
  FeatureCanvas canvas(3, 2, 2);
  for (std::size_t i = 0; i < canvas.values.size(); ++i) canvas.values[i] = 1.0 + i;
  for (const auto& t : enumerate_transformations(sp)) {
    const auto r = render_feature(canvas, t, sp);
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 7; ++x) {
        const auto src = inverse_pixel_map(sp, t, y, x);
        CHECK(static_cast<bool>(r.support[y * 7 + x]) == src.has_value());
        for (int c = 0; c < 2; ++c) {
          const double want = src ? canvas.values[c * 6 + *src] : 0.0;
          if (r.values.at(y, x, c) != want) FAIL("mismatch");
        }
      }
    }
  }
}
