#include <cmath>
#include <limits>
#include <random>
#include <tuple>

#include "doctest.h"
#include "oracles.hpp"
#include "panodream/cloud.hpp"
#include "panodream/errors.hpp"

using namespace panodream;
using namespace panodream::cloud;
using geom::PanoGeometry;
using geom::Pose;

using namespace panodream::oracle;

namespace {

PanoFrame random_frame(const PanoGeometry& g, const Pose& pose, std::mt19937_64& rng, int classes) {
  PanoFrame f(g, pose);
  std::uniform_int_distribution<int> uc(0, classes - 1);
  std::uniform_real_distribution<double> ud(0.5, 9.5);
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      f.sem(x, y) = uc(rng);
      f.depth(x, y) = ud(rng);
      f.rgb(x, y) = {static_cast<std::uint8_t>(x), static_cast<std::uint8_t>(y), 7};
    }
  }
  return f;
}

}  // namespace

TEST_CASE("insert_frame counts and stride") {
  const PanoGeometry g(8, 4);
  std::mt19937_64 rng(1);
  const auto f = random_frame(g, Pose(), rng, 13);
  PointCloud c(13);
  CHECK(c.insert_frame(f, 1) == 32);
  PointCloud c2(13);
  CHECK(c2.insert_frame(f, 2) == 8);
  CHECK(c2.points().front().frame_index == 0);
  c2.insert_frame(f, 2);
  CHECK(c2.points().back().frame_index == 1);
}

TEST_CASE("insert_frame rejects bad classes without mutating") {
  const PanoGeometry g(8, 4);
  std::mt19937_64 rng(1);
  auto f = random_frame(g, Pose(), rng, 13);
  f.sem(3, 2) = 13;
  PointCloud c(13);
  CHECK_THROWS_AS(c.insert_frame(f, 1), DataError);
  CHECK(c.empty());
  CHECK_THROWS_AS(c.insert_frame(f, 0), DomainError);
}

TEST_CASE("inserted points re-project onto their source pixels") {
  const PanoGeometry g(64, 32);
  std::mt19937_64 rng(2);
  const Pose pose({0.3, 1.5, -0.2}, 0.7);
  const auto f = random_frame(g, pose, rng, 13);
  PointCloud c(13);
  c.insert_frame(f, 1);
  double worst = 0.0;
  std::size_t k = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 64; ++x, ++k) {
      const auto pr = geom::project(g, c.points()[k].position, pose);
      double dx = std::abs(pr.x - (x + 0.5));
      dx = std::min(dx, 64.0 - dx);
      worst = std::max({worst, dx, std::abs(pr.y - (y + 0.5)), std::abs(pr.depth - f.depth(x, y))});
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("render_guidance identity, empty and z-buffer") {
  const PanoGeometry g(64, 32);
  PointCloud empty(13);
  const auto ge = render_guidance(empty, Pose(), g);
  CHECK(ge.valid_count() == 0);
  CHECK(ge.sem(5, 5) == kInvalidClass);

  std::mt19937_64 rng(3);
  const Pose pose({1.0, 1.5, 2.0}, -1.1);
  const auto f = random_frame(g, pose, rng, 13);
  PointCloud c(13);
  c.insert_frame(f, 1);
  const auto gi = render_guidance(c, pose, g);
  CHECK(gi.valid_fraction() >= 0.99);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (!gi.valid(x, y)) continue;
      CHECK(gi.sem(x, y) == f.sem(x, y));
      CHECK(std::abs(gi.depth(x, y) - f.depth(x, y)) < 1e-9);
    }
  }

  PointCloud zc(13);
  const Eigen::Vector3d dir = geom::pixel_to_ray(g, 20.5, 10.5);
  zc.append({3.0 * dir, 4, {}, 0});
  zc.append({2.0 * dir, 6, {}, 0});
  const auto gz = render_guidance(zc, Pose(), g);
  CHECK(gz.valid(20, 10) == 1);
  CHECK(gz.sem(20, 10) == 6);
  CHECK(gz.depth(20, 10) == doctest::Approx(2.0));
  CHECK(gz.valid_count() == 1);
}

TEST_CASE("render_guidance ties prefer older frames and drop far points") {
  const PanoGeometry g(16, 8);
  const Eigen::Vector3d dir = geom::pixel_to_ray(g, 3.5, 3.5);
  PointCloud c(13);
  c.append({2.0 * dir, 3, {}, 0});
  c.append({2.0 * dir, 5, {}, 1});
  c.append({12.0 * geom::pixel_to_ray(g, 9.5, 4.5), 5, {}, 1});
  const auto gi = render_guidance(c, Pose(), g);
  CHECK(gi.sem(3, 3) == 3);
  CHECK(gi.valid(9, 4) == 0);
}

TEST_CASE("render_guidance is independent of insertion batching and monotone") {
  const PanoGeometry g(32, 16);
  std::mt19937_64 rng(4);
  const auto f1 = random_frame(g, Pose({0, 1.5, 0}, 0.0), rng, 13);
  const auto f2 = random_frame(g, Pose({1, 1.5, 0.5}, 0.4), rng, 13);
  PointCloud a(13), b(13);
  a.insert_frame(f1, 1);
  a.insert_frame(f2, 1);
  for (const auto& p : a.points()) b.append(p);
  const Pose q({0.5, 1.4, 0.2}, 1.0);
  CHECK(render_guidance(a, q, g).sem == render_guidance(b, q, g).sem);
  CHECK(render_guidance(a, q, g).depth == render_guidance(b, q, g).depth);

  PointCloud grow(13);
  std::size_t prev = 0;
  for (const auto* f : {&f1, &f2}) {
    grow.insert_frame(*f, 2);
    const auto n = render_guidance(grow, q, g).valid_count();
    CHECK(n >= prev);
    prev = n;
  }
}

TEST_CASE("nn_fill edge cases") {
  std::mt19937_64 rng(5);
  auto full = random_guidance(16, 8, 1.0, rng);
  const auto out = nn_fill(full);
  CHECK(out.sem == full.sem);
  CHECK(out.depth == full.depth);

  GuidanceImage one(PanoGeometry(16, 8));
  one.valid(5, 3) = 1;
  one.sem(5, 3) = 9;
  one.depth(5, 3) = 4.25;
  const auto c = nn_fill(one);
  for (auto s : c.sem.pixels()) CHECK(s == 9);
  for (auto d : c.depth.pixels()) CHECK(d == 4.25);

  GuidanceImage none(PanoGeometry(16, 8));
  CHECK_THROWS_AS(nn_fill(none), NoContextError);

  // Wrapped distance 1 beats direct distance W-2.
  GuidanceImage wrap(PanoGeometry(16, 8));
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 16; ++x) wrap.valid(x, y) = 0;
  }
  wrap.valid(0, 4) = 1;
  wrap.sem(0, 4) = 1;
  wrap.depth(0, 4) = 1.0;
  wrap.valid(15, 4) = 1;
  wrap.sem(15, 4) = 2;
  wrap.depth(15, 4) = 2.0;
  const auto w = nn_fill(wrap);
  CHECK(w.sem(14, 4) == 2);
  CHECK(w.sem(1, 4) == 1);
  CHECK(w == brute_nn(wrap));
}

TEST_CASE("nn_fill matches exhaustive search") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const int h = 4 + 2 * (i % 3);
    const double density = 0.02 + 0.3 * ((i * 37) % 10) / 10.0;
    auto g = random_guidance(2 * h, h, density, rng);
    if (g.valid_count() == 0) {
      g.valid(0, 0) = 1;
      g.sem(0, 0) = 1;
      g.depth(0, 0) = 1.0;
    }
    const auto fast = nn_fill(g);
    const auto slow = brute_nn(g);
    CHECK(fast.sem == slow.sem);
    CHECK(fast.depth == slow.depth);
  }
}
