#include "dimask/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace dimask::loss {

namespace {

using detail::Node;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> box_rows(const std::vector<synth::InstanceGT>& gt, const Assignment& a) {
  std::vector<double> out;
  for (auto [_, g] : a) {
    const Box& b = gt[g].box;
    out.insert(out.end(), {b.cx, b.cy, b.w, b.h});
  }
  return out;
}

std::vector<std::size_t> rows_of(const Assignment& a) {
  std::vector<std::size_t> r;
  for (auto [q, _] : a) r.push_back(q);
  return r;
}

std::vector<int> class_targets(std::size_t rows, const std::vector<synth::InstanceGT>& gt, const Assignment& a) {
  std::vector<int> t(rows, -1);
  for (auto [q, g] : a) t[q] = gt[g].class_id;
  return t;
}

Tensor column(const Tensor& x, std::size_t c) { return slice(x, 1, c, c + 1); }

PredView view_of(const Tensor& logits, const Tensor& boxes) {
  return {logits.dim(0), logits.dim(1), logits.data(), boxes.data(), {}, 0, 0};
}

struct Accum {
  std::vector<Tensor> parts;
  LossReport* report;

  // `scale_last` is applied as its own multiplication so a constrained term
  // is exactly that factor times the unconstrained one.
  void add(const std::string& name, const Tensor& value, double weight, double scale_last = 1.0) {
    if (weight == 0.0 || scale_last == 0.0) {
      report->terms.emplace_back(name, 0.0);
      return;
    }
    Tensor t = scale(value, weight);
    if (scale_last != 1.0) t = scale(t, scale_last);
    report->terms.emplace_back(name, t.item());
    parts.push_back(t);
  }
};

}  // namespace

Tensor focal_loss(const Tensor& logits, const std::vector<int>& targets, double normalizer, double gamma,
                  double alpha) {
  if (logits.rank() != 2 || targets.size() != logits.dim(0)) {
    throw DimensionError("focal_loss: need one target per row of " + shape_str(logits.shape()));
  }
  const std::size_t k = logits.dim(0), c = logits.dim(1);
  const auto x = logits.data();
  std::vector<double> dx(k * c);
  double total = 0;
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double v = x[r * c + j];
      const double p = sigm(v);
      if (targets[r] == static_cast<int>(j)) {
        const double log_p = -softplus(-v);
        const double mod = std::pow(1.0 - p, gamma);
        total += -alpha * mod * log_p;
        dx[r * c + j] = alpha * mod * (gamma * p * log_p - (1.0 - p));
      } else {
        const double log_q = -softplus(v);
        const double mod = std::pow(p, gamma);
        total += -(1.0 - alpha) * mod * log_q;
        dx[r * c + j] = (1.0 - alpha) * mod * (p - gamma * (1.0 - p) * log_q);
      }
    }
  }
  const double inv = 1.0 / normalizer;
  for (double& g : dx) g *= inv;
  return Tensor::make_result({}, {total * inv}, {logits}, [dx = std::move(dx)](Node& o) {
    Node& p = o.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) g[i] += o.grad[0] * dx[i];
  });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (targets.size() != logits.numel() || targets.empty()) {
    throw DimensionError("bce_with_logits: target count does not match " + shape_str(logits.shape()));
  }
  const auto x = logits.data();
  const double inv = 1.0 / static_cast<double>(x.size());
  double total = 0;
  std::vector<double> dx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += softplus(x[i]) - x[i] * targets[i];
    dx[i] = (sigm(x[i]) - targets[i]) * inv;
  }
  return Tensor::make_result({}, {total * inv}, {logits}, [dx = std::move(dx)](Node& o) {
    Node& p = o.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) g[i] += o.grad[0] * dx[i];
  });
}

Tensor dice_loss(const Tensor& logits, const std::vector<double>& targets) {
  if (logits.rank() != 2 || targets.size() != logits.numel()) {
    throw DimensionError("dice_loss: target count does not match " + shape_str(logits.shape()));
  }
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  const auto x = logits.data();
  std::vector<double> dx(x.size());
  double total = 0;
  std::vector<double> p(n);
  for (std::size_t r = 0; r < m; ++r) {
    double inter = 0, ps = 0, ys = 0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = sigm(x[r * n + j]);
      inter += p[j] * targets[r * n + j];
      ps += p[j];
      ys += targets[r * n + j];
    }
    const double num = 2.0 * inter + 1.0, den = ps + ys + 1.0;
    total += 1.0 - num / den;
    for (std::size_t j = 0; j < n; ++j) {
      const double dp = -(2.0 * targets[r * n + j] * den - num) / (den * den);
      dx[r * n + j] = dp * p[j] * (1.0 - p[j]);
    }
  }
  return Tensor::make_result({}, {total}, {logits}, [dx = std::move(dx)](Node& o) {
    Node& p = o.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) g[i] += o.grad[0] * dx[i];
  });
}

Tensor giou_loss(const Tensor& pred, const std::vector<double>& target) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || target.size() != pred.numel()) {
    throw DimensionError("giou_loss: expects matching [m,4] boxes, got " + shape_str(pred.shape()));
  }
  const std::size_t m = pred.dim(0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(pred.data()[i * 4 + 2] > 0 && pred.data()[i * 4 + 3] > 0 && target[i * 4 + 2] > 0 &&
          target[i * 4 + 3] > 0)) {
      throw std::invalid_argument("giou_loss: degenerate box in row " + std::to_string(i));
    }
  }
  const Tensor tgt = Tensor::from({m, 4}, target);
  auto corners = [](const Tensor& b) {
    const Tensor cx = column(b, 0), cy = column(b, 1);
    const Tensor hw = scale(column(b, 2), 0.5), hh = scale(column(b, 3), 0.5);
    return std::array<Tensor, 4>{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
  };
  const auto a = corners(pred), b = corners(tgt);
  const Tensor iw = relu(sub(minimum(a[2], b[2]), maximum(a[0], b[0])));
  const Tensor ih = relu(sub(minimum(a[3], b[3]), maximum(a[1], b[1])));
  const Tensor inter = mul(iw, ih);
  const Tensor area_a = mul(sub(a[2], a[0]), sub(a[3], a[1]));
  const Tensor area_b = mul(sub(b[2], b[0]), sub(b[3], b[1]));
  const Tensor uni = sub(add(area_a, area_b), inter);
  const Tensor ew = sub(maximum(a[2], b[2]), minimum(a[0], b[0]));
  const Tensor eh = sub(maximum(a[3], b[3]), minimum(a[1], b[1]));
  const Tensor encl = mul(ew, eh);
  const Tensor g = sub(div(inter, uni), div(sub(encl, uni), encl));
  return sub(Tensor::scalar(static_cast<double>(m)), sum(g));
}

Tensor l1_loss(const Tensor& pred, const std::vector<double>& target) {
  if (target.size() != pred.numel()) throw DimensionError("l1_loss: target size mismatch");
  return sum(abs(sub(pred, Tensor::from(pred.shape(), target))));
}

double LossReport::term(const std::string& name) const {
  for (const auto& [n, v] : terms)
    if (n == name) return v;
  throw std::out_of_range("no loss term named " + name);
}

double LossReport::detection() const {
  double total = 0;
  for (const auto& [n, v] : terms) {
    const auto dot = n.rfind('.');
    const std::string kind = n.substr(dot + 1);
    if (kind == "cls" || kind == "l1" || kind == "giou") total += v;
  }
  return total;
}

LossReport total_loss(const model::ForwardResult& fwd, const synth::Scene& scene, const LossWeights& w,
                      std::uint64_t point_seed, const Matching* fixed) {
  const auto& gt = scene.instances;
  const double num_gt = std::max<double>(1.0, static_cast<double>(gt.size()));
  const std::size_t layers = fwd.predictions.size();
  LossReport report;
  Accum acc{{}, &report};
  const double ds = w.detection_scale;
  const auto points = sample_points(point_seed);

  if (fixed && (fixed->layers.size() != layers || fixed->rescores.size() != fwd.di.rescores.size())) {
    throw std::invalid_argument("fixed matching does not fit this forward pass");
  }

  auto detection_terms = [&](const std::string& prefix, const Tensor& logits, const Tensor& boxes,
                             const Assignment& a, double weight) {
    acc.add(prefix + ".cls", focal_loss(logits, class_targets(logits.dim(0), gt, a), num_gt), weight * w.cls, ds);
    if (a.empty()) return;
    const auto rows = rows_of(a);
    const Tensor matched = gather_rows(boxes, rows);
    const auto target = box_rows(gt, a);
    acc.add(prefix + ".l1", scale(l1_loss(matched, target), 1.0 / num_gt), weight * w.l1, ds);
    acc.add(prefix + ".giou", scale(giou_loss(matched, target), 1.0 / num_gt), weight * w.giou, ds);
  };

  for (std::size_t l = 0; l < layers; ++l) {
    const auto& p = fwd.predictions[l];
    const double lw = (l + 1 == layers) ? 1.0 : w.aux;
    Assignment a;
    if (fixed) {
      a = fixed->layers[l];
    } else {
      PredView v = view_of(p.class_logits, p.boxes);
      v.mask_logits = p.mask_logits.data();
      v.mask_h = p.mask_h;
      v.mask_w = p.mask_w;
      a = hungarian(matching_cost(v, gt, scene.height, scene.width, w, points));
    }
    report.matching.layers.push_back(a);
    const std::string prefix = "layer" + std::to_string(l);
    detection_terms(prefix, p.class_logits, p.boxes, a, lw);
    if (a.empty()) continue;

    const std::size_t factor = scene.height / p.mask_h;
    const Tensor low = transpose(gather_rows(p.mask_logits, rows_of(a)));
    const Tensor full = transpose(upsample_bilinear(low, p.mask_h, p.mask_w, factor));
    std::vector<double> target;
    target.reserve(full.numel());
    for (auto [_, g] : a) target.insert(target.end(), gt[g].mask.begin(), gt[g].mask.end());
    acc.add(prefix + ".mask_ce", scale(bce_with_logits(full, target), static_cast<double>(a.size()) / num_gt),
            lw * w.ce_mask);
    acc.add(prefix + ".dice", scale(dice_loss(full, target), 1.0 / num_gt), lw * w.dice);
  }

  const auto& sc = fwd.di.scores;
  Assignment ea = fixed ? fixed->encoder
                        : hungarian(matching_cost(view_of(sc.class_logits, sc.boxes), gt, scene.height,
                                                  scene.width, w, points));
  report.matching.encoder = ea;
  detection_terms("encoder", sc.class_logits, sc.boxes, ea, w.encoder);

  for (std::size_t s = 0; s < fwd.di.rescores.size(); ++s) {
    const auto& rs = fwd.di.rescores[s];
    Assignment a;
    if (fixed) {
      a = fixed->rescores[s];
    } else {
      const Tensor boxes = gather_rows(sc.boxes.detach(), rs.sources);
      a = hungarian(matching_cost(view_of(rs.class_logits, boxes), gt, scene.height, scene.width, w, points));
    }
    report.matching.rescores.push_back(a);
    const std::string prefix = "rescore" + std::to_string(s + 1);
    acc.add(prefix + ".cls", focal_loss(rs.class_logits, class_targets(rs.class_logits.dim(0), gt, a), num_gt),
            w.encoder * w.cls, ds);
  }

  Tensor total = acc.parts.empty() ? Tensor::scalar(0.0) : acc.parts.front();
  for (std::size_t i = 1; i < acc.parts.size(); ++i) total = add(total, acc.parts[i]);
  report.total = total;
  return report;
}

}  // namespace dimask::loss
