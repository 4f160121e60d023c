#include "dimask/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace dimask {

double box_iou(const Box& a, const Box& b) {
  const auto ca = a.corners(), cb = b.corners();
  const double iw = std::max(0.0, std::min(ca[2], cb[2]) - std::max(ca[0], cb[0]));
  const double ih = std::max(0.0, std::min(ca[3], cb[3]) - std::max(ca[1], cb[1]));
  const double inter = iw * ih;
  const double uni = (ca[2] - ca[0]) * (ca[3] - ca[1]) + (cb[2] - cb[0]) * (cb[3] - cb[1]) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double giou_corners(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  if (!(a[2] > a[0] && a[3] > a[1] && b[2] > b[0] && b[3] > b[1])) {
    throw std::invalid_argument("giou: degenerate box (non-positive width or height)");
  }
  const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = iw * ih;
  const double area_a = (a[2] - a[0]) * (a[3] - a[1]);
  const double area_b = (b[2] - b[0]) * (b[3] - b[1]);
  const double uni = area_a + area_b - inter;
  const double ew = std::max(a[2], b[2]) - std::min(a[0], b[0]);
  const double eh = std::max(a[3], b[3]) - std::min(a[1], b[1]);
  const double enclosure = ew * eh;
  return inter / uni - (enclosure - uni) / enclosure;
}

double giou(const Box& a, const Box& b) { return giou_corners(a.corners(), b.corners()); }

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("mask_iou: masks of " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " pixels");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Box mask_box(std::span<const std::uint8_t> mask, std::size_t h, std::size_t w) {
  if (mask.size() != h * w) throw std::invalid_argument("mask_box: mask size does not match h*w");
  std::size_t x0 = w, y0 = h, x1 = 0, y1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask[y * w + x]) continue;
      any = true;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x + 1);
      y1 = std::max(y1, y + 1);
    }
  }
  if (!any) return {};
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  return {(static_cast<double>(x0 + x1) / 2.0) / W, (static_cast<double>(y0 + y1) / 2.0) / H,
          static_cast<double>(x1 - x0) / W, static_cast<double>(y1 - y0) / H};
}

std::vector<std::uint32_t> rle_encode(std::span<const std::uint8_t> mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t v : mask) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      runs.push_back(length);
      length = 0;
      current = bit;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

std::vector<std::uint8_t> rle_decode(std::span<const std::uint32_t> runs, std::size_t n) {
  std::vector<std::uint8_t> mask;
  mask.reserve(n);
  std::uint8_t bit = 0;
  for (std::uint32_t run : runs) {
    if (run > n - mask.size()) throw std::invalid_argument("rle runs exceed mask size");
    mask.insert(mask.end(), run, bit);
    bit ^= 1;
  }
  if (mask.size() != n) {
    throw std::invalid_argument("rle runs cover " + std::to_string(mask.size()) + " of " +
                                std::to_string(n) + " pixels");
  }
  return mask;
}

}  // namespace dimask
