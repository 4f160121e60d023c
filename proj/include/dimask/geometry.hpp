#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dimask {

// Normalized box, center form: (cx, cy, w, h) in [0,1].
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  bool operator==(const Box&) const = default;
  std::array<double, 4> corners() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
};

// Intersection over union of two boxes; 0 when both are degenerate.
double box_iou(const Box& a, const Box& b);

// Generalized IoU: IoU - (enclosure - union) / enclosure. Both boxes must
// have positive width and height (std::invalid_argument otherwise).
double giou(const Box& a, const Box& b);

// Corner-form variants: (x0, y0, x1, y1).
double giou_corners(const std::array<double, 4>& a, const std::array<double, 4>& b);

// Mask IoU of two equal-size binary masks. Two empty masks have IoU 1.
double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// Tight normalized bounding box of the foreground pixels of an h x w mask.
// Pixel (x, y) covers [x, x+1) x [y, y+1) before normalization.
Box mask_box(std::span<const std::uint8_t> mask, std::size_t h, std::size_t w);

// Run-length code of a row-major binary mask: alternating run lengths,
// starting with a (possibly empty) background run.
std::vector<std::uint32_t> rle_encode(std::span<const std::uint8_t> mask);
// Throws std::invalid_argument when the runs do not cover exactly n pixels.
std::vector<std::uint8_t> rle_decode(std::span<const std::uint32_t> runs, std::size_t n);

}  // namespace dimask
