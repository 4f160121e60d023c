#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "dimask/geometry.hpp"
#include "dimask/rng.hpp"

using namespace dimask;

namespace {

Box from_corners(double x0, double y0, double x1, double y1) {
  return {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
}

// Area counting on a fine grid over [lo, hi]^2.
struct Raster {
  double inter = 0, uni = 0, hull = 0;
};

Raster rasterize_pair(const Box& a, const Box& b, int grid) {
  const auto ca = a.corners(), cb = b.corners();
  const double lo = std::min({ca[0], cb[0], ca[1], cb[1]});
  const double hi = std::max({ca[2], cb[2], ca[3], cb[3]});
  const double step = (hi - lo) / grid;
  const double ex0 = std::min(ca[0], cb[0]), ey0 = std::min(ca[1], cb[1]);
  const double ex1 = std::max(ca[2], cb[2]), ey1 = std::max(ca[3], cb[3]);
  Raster r;
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const double x = lo + (j + 0.5) * step, y = lo + (i + 0.5) * step;
      const bool in_a = x >= ca[0] && x < ca[2] && y >= ca[1] && y < ca[3];
      const bool in_b = x >= cb[0] && x < cb[2] && y >= cb[1] && y < cb[3];
      const bool in_e = x >= ex0 && x < ex1 && y >= ey0 && y < ey1;
      r.inter += in_a && in_b;
      r.uni += in_a || in_b;
      r.hull += in_e;
    }
  }
  return r;
}

Box random_box(Rng& rng) {
  const double w = rng.uniform(0.05, 0.6), h = rng.uniform(0.05, 0.6);
  return {rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
}

}  // namespace

TEST_CASE("giou closed-form cases") {
  const Box a = from_corners(0, 0, 1, 1);
  CHECK(giou(a, a) == 1.0);
  CHECK(giou_corners({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0);
  CHECK(giou_corners({0, 0, 1, 1}, {2, 0, 3, 1}) == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
  const Raster r = rasterize_pair(a, from_corners(2, 0, 3, 1), 900);
  const double oracle = r.inter / r.uni - (r.hull - r.uni) / r.hull;
  CHECK(std::abs(oracle + 1.0 / 3.0) <= 2e-2);
}

TEST_CASE("giou and box iou against area counting") {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const Box a = random_box(rng), b = random_box(rng);
    const Raster r = rasterize_pair(a, b, 300);
    const double iou_oracle = r.inter / r.uni;
    const double giou_oracle = iou_oracle - (r.hull - r.uni) / r.hull;
    CHECK(std::abs(box_iou(a, b) - iou_oracle) <= 2e-2);
    CHECK(std::abs(giou(a, b) - giou_oracle) <= 2e-2);
    CHECK(std::abs(giou(a, b) - giou(b, a)) <= 1e-12);
    CHECK(giou(a, b) <= box_iou(a, b) + 1e-15);
    CHECK(giou(a, b) > -1.0);
  }
}

TEST_CASE("box iou edge cases") {
  const Box a{0.3, 0.3, 0.2, 0.2};
  CHECK(box_iou(a, a) == 1.0);
  CHECK(box_iou(a, Box{0.8, 0.8, 0.2, 0.2}) == 0.0);
}

TEST_CASE("degenerate boxes are rejected by giou") {
  CHECK_THROWS_AS(giou(Box{0.5, 0.5, 0.0, 0.2}, Box{0.5, 0.5, 0.2, 0.2}), std::invalid_argument);
}

TEST_CASE("mask iou") {
  const std::vector<std::uint8_t> a{1, 1, 0, 0}, b{0, 1, 1, 0}, z{0, 0, 0, 0};
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(mask_iou(a, a) == 1.0);
  CHECK(mask_iou(z, z) == 1.0);
  CHECK(mask_iou(a, z) == 0.0);
  CHECK_THROWS_AS(mask_iou(a, std::vector<std::uint8_t>{1}), std::invalid_argument);

  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::uint8_t> x(64), y(64);
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      x[i] = rng.below(2);
      y[i] = rng.below(2);
      inter += x[i] & y[i];
      uni += x[i] | y[i];
    }
    if (uni > 0) CHECK(mask_iou(x, y) == static_cast<double>(inter) / uni);
  }
}

TEST_CASE("mask box is the tight pixel-edge rectangle") {
  std::vector<std::uint8_t> m(8 * 8, 0);
  for (int y = 2; y < 5; ++y)
    for (int x = 1; x < 7; ++x) m[y * 8 + x] = 1;
  const Box b = mask_box(m, 8, 8);
  CHECK(b.cx == 0.5);
  CHECK(b.cy == 3.5 / 8);
  CHECK(b.w == 6.0 / 8);
  CHECK(b.h == 3.0 / 8);
}

TEST_CASE("rle round trip") {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::uint8_t> m(100);
    for (auto& v : m) v = rng.uniform() < 0.3 ? 1 : 0;
    CHECK(rle_decode(rle_encode(m), m.size()) == m);
  }
  const std::vector<std::uint8_t> ones(5, 1);
  const auto runs = rle_encode(ones);
  CHECK(runs == std::vector<std::uint32_t>{0, 5});
  CHECK_THROWS_AS(rle_decode(runs, 4), std::invalid_argument);
  CHECK_THROWS_AS(rle_decode(std::vector<std::uint32_t>{3}, 5), std::invalid_argument);
}
