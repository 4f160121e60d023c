#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dimask/synth.hpp"

namespace dimask::loss {

using Assignment = std::vector<std::pair<std::size_t, std::size_t>>;  // (row, col), ascending row

struct CostMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Minimum-cost one-to-one assignment with min(rows, cols) pairs, O(n^3)
// shortest augmenting paths. Throws std::invalid_argument on non-finite
// entries.
Assignment hungarian(const CostMatrix& cost);

double assignment_cost(const CostMatrix& cost, const Assignment& a);

struct LossWeights {
  double cls = 4.0;
  double l1 = 5.0;
  double giou = 2.0;
  double ce_mask = 5.0;
  double dice = 5.0;
  double aux = 1.0;              // non-final decoder layers
  double encoder = 1.0;          // encoder-side selection heads
  double detection_scale = 1.0;  // multiplies every cls/L1/GIoU term

  void validate() const;  // ConfigError on negatives

  bool operator==(const LossWeights&) const = default;
};

// Normalized (x, y) image locations shared by every instance of one image
// when pricing masks for matching.
std::vector<std::pair<double, double>> sample_points(std::uint64_t seed, std::size_t count = 112);

// Logit of the h x w map pixel containing normalized (x, y). Ground truth
// is read the same way, so a mask that agrees pixelwise costs nothing.
double sample_logit(std::span<const double> map, std::size_t h, std::size_t w, double x, double y);

// Plain-value view of one prediction set. Masks may be empty (encoder side).
struct PredView {
  std::size_t rows = 0, classes = 0;
  std::span<const double> class_logits;  // rows x classes
  std::span<const double> boxes;         // rows x 4
  std::span<const double> mask_logits;   // rows x mask_h x mask_w, or empty
  std::size_t mask_h = 0, mask_w = 0;
};

// cost(q, g) = w_cls (1 - p_q(class_g)) + w_l1 |b_q - b_g|_1 + w_giou (1 - giou)
//            + w_ce bce(points) + w_dice dice(points)
// Mask terms are skipped when the view has no masks.
CostMatrix matching_cost(const PredView& pred, const std::vector<synth::InstanceGT>& gt,
                         std::size_t image_h, std::size_t image_w, const LossWeights& w,
                         const std::vector<std::pair<double, double>>& points);

}  // namespace dimask::loss
