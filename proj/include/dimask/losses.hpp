#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dimask/matching.hpp"
#include "dimask/model.hpp"

namespace dimask::loss {

// Sigmoid focal loss summed over every (query, class) entry and divided by
// `normalizer`. targets[q] is the class of the matched object or -1.
Tensor focal_loss(const Tensor& logits, const std::vector<int>& targets, double normalizer,
                  double gamma = 2.0, double alpha = 0.25);

// Mean binary cross-entropy with logits over every element.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);

// Sum over rows of 1 - (2 sum(p y) + 1) / (sum p + sum y + 1), p = sigmoid(logits).
Tensor dice_loss(const Tensor& logits, const std::vector<double>& targets);

// sum over rows of 1 - giou(pred_r, target_r); both [m, 4] in cx,cy,w,h.
// Built from primitive ops. Throws std::invalid_argument on a box with
// non-positive width or height.
Tensor giou_loss(const Tensor& pred, const std::vector<double>& target);

// sum |pred - target| over all elements.
Tensor l1_loss(const Tensor& pred, const std::vector<double>& target);

// Matches for every supervised prediction set of one forward pass.
struct Matching {
  std::vector<Assignment> layers;
  Assignment encoder;
  std::vector<Assignment> rescores;
};

struct LossReport {
  Tensor total;
  std::vector<std::pair<std::string, double>> terms;  // weighted contributions
  Matching matching;

  double term(const std::string& name) const;  // std::out_of_range if absent
  double detection() const;                     // all cls + l1 + giou terms
};

// Deep-supervised loss of one image. Matches are computed from current
// predictions unless `fixed` is given. `point_seed` fixes the mask sample
// points used for matching.
LossReport total_loss(const model::ForwardResult& fwd, const synth::Scene& scene, const LossWeights& w,
                      std::uint64_t point_seed, const Matching* fixed = nullptr);

}  // namespace dimask::loss
