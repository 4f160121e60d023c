#include "dimask/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dimask/errors.hpp"
#include "dimask/geometry.hpp"
#include "dimask/rng.hpp"

namespace dimask::loss {

namespace {

// rows <= cols. p[j] is the row (1-based) assigned to column j.
Assignment solve_wide(const std::vector<double>& a, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) out.emplace_back(p[j] - 1, j - 1);
  std::sort(out.begin(), out.end());
  return out;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

namespace {

Assignment solve_any(const std::vector<double>& values, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) return {};
  if (rows <= cols) return solve_wide(values, rows, cols);
  std::vector<double> t(values.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = values[r * cols + c];
  Assignment out;
  for (auto [c, r] : solve_wide(t, cols, rows)) out.emplace_back(r, c);
  std::sort(out.begin(), out.end());
  return out;
}

// Optimum over rows [from, rows) and the columns still free.
double sub_optimum(const CostMatrix& cost, std::size_t from, const std::vector<std::size_t>& free_cols) {
  const std::size_t rows = cost.rows - from, cols = free_cols.size();
  if (rows == 0 || cols == 0) return 0.0;
  std::vector<double> sub(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) sub[r * cols + c] = cost.at(from + r, free_cols[c]);
  double total = 0.0;
  for (auto [r, c] : solve_any(sub, rows, cols)) total += sub[r * cols + c];
  return total;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  if (cost.values.size() != cost.rows * cost.cols) throw std::invalid_argument("cost matrix size mismatch");
  for (double v : cost.values)
    if (!std::isfinite(v)) throw std::invalid_argument("cost matrix has a non-finite entry");
  if (cost.rows == 0 || cost.cols == 0) return {};

  // Among optimal assignments take the lexicographically smallest (row, col)
  // list: walk rows in order, give each the smallest column that still
  // admits an optimal completion, and leave it unmatched only if none does.
  // Sums that differ by rounding alone count as ties.
  const std::size_t need = std::min(cost.rows, cost.cols);
  std::vector<std::size_t> free_cols(cost.cols);
  std::iota(free_cols.begin(), free_cols.end(), 0);
  double remaining = sub_optimum(cost, 0, free_cols);
  Assignment out;
  for (std::size_t r = 0; r < cost.rows && out.size() < need; ++r) {
    const double tol = 1e-12 * std::max(1.0, std::abs(remaining));
    const bool must_assign = cost.rows - r == need - out.size();
    bool placed = false;
    for (std::size_t i = 0; i < free_cols.size(); ++i) {
      std::vector<std::size_t> rest = free_cols;
      rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(i));
      const double tail = sub_optimum(cost, r + 1, rest);
      const bool last = i + 1 == free_cols.size() && must_assign;
      if (cost.at(r, free_cols[i]) + tail <= remaining + tol || last) {
        out.emplace_back(r, free_cols[i]);
        free_cols = std::move(rest);
        remaining = tail;
        placed = true;
        break;
      }
    }
    if (!placed) remaining = sub_optimum(cost, r + 1, free_cols);
  }
  return out;
}

double assignment_cost(const CostMatrix& cost, const Assignment& a) {
  double total = 0;
  for (auto [r, c] : a) total += cost.at(r, c);
  return total;
}

void LossWeights::validate() const {
  for (double v : {cls, l1, giou, ce_mask, dice, aux, encoder, detection_scale}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

std::vector<std::pair<double, double>> sample_points(std::uint64_t seed, std::size_t count) {
  Rng rng(mix_seed(seed, 0x9017));
  std::vector<std::pair<double, double>> pts(count);
  for (auto& [x, y] : pts) {
    x = rng.uniform();
    y = rng.uniform();
  }
  return pts;
}

double sample_logit(std::span<const double> map, std::size_t h, std::size_t w, double x, double y) {
  const auto px = std::min(static_cast<std::size_t>(std::max(x, 0.0) * static_cast<double>(w)), w - 1);
  const auto py = std::min(static_cast<std::size_t>(std::max(y, 0.0) * static_cast<double>(h)), h - 1);
  return map[py * w + px];
}

CostMatrix matching_cost(const PredView& pred, const std::vector<synth::InstanceGT>& gt,
                         std::size_t image_h, std::size_t image_w, const LossWeights& w,
                         const std::vector<std::pair<double, double>>& points) {
  CostMatrix cost{pred.rows, gt.size(), std::vector<double>(pred.rows * gt.size())};
  if (gt.empty() || pred.rows == 0) return cost;
  const bool masks = !pred.mask_logits.empty();
  const std::size_t mpix = pred.mask_h * pred.mask_w;

  // Ground-truth labels at the sample points.
  std::vector<std::vector<double>> labels(gt.size());
  if (masks) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      for (auto [x, y] : points) {
        const auto px = std::min(static_cast<std::size_t>(x * static_cast<double>(image_w)), image_w - 1);
        const auto py = std::min(static_cast<std::size_t>(y * static_cast<double>(image_h)), image_h - 1);
        labels[g].push_back(gt[g].mask[py * image_w + px] ? 1.0 : 0.0);
      }
    }
  }

  std::vector<double> logit_at(points.size());
  for (std::size_t q = 0; q < pred.rows; ++q) {
    if (masks) {
      const auto map = pred.mask_logits.subspan(q * mpix, mpix);
      for (std::size_t i = 0; i < points.size(); ++i)
        logit_at[i] = sample_logit(map, pred.mask_h, pred.mask_w, points[i].first, points[i].second);
    }
    const Box pb{pred.boxes[q * 4], pred.boxes[q * 4 + 1], pred.boxes[q * 4 + 2], pred.boxes[q * 4 + 3]};
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double logit = pred.class_logits[q * pred.classes + static_cast<std::size_t>(gt[g].class_id)];
      const double p = 1.0 / (1.0 + std::exp(-logit));
      const Box& gb = gt[g].box;
      const double l1 = std::abs(pb.cx - gb.cx) + std::abs(pb.cy - gb.cy) + std::abs(pb.w - gb.w) +
                        std::abs(pb.h - gb.h);
      double c = w.cls * (1.0 - p) + w.l1 * l1 + w.giou * (1.0 - giou(pb, gb));
      if (masks) {
        double bce = 0, inter = 0, psum = 0, ysum = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          const double x = logit_at[i], y = labels[g][i];
          bce += softplus(x) - x * y;
          const double pi = 1.0 / (1.0 + std::exp(-x));
          inter += pi * y;
          psum += pi;
          ysum += y;
        }
        bce /= static_cast<double>(points.size());
        const double dice = 1.0 - (2.0 * inter + 1.0) / (psum + ysum + 1.0);
        c += w.ce_mask * bce + w.dice * dice;
      }
      cost.values[q * gt.size() + g] = c;
    }
  }
  return cost;
}

}  // namespace dimask::loss
