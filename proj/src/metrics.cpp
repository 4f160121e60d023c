#include "dimask/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "dimask/csv.hpp"
#include "dimask/errors.hpp"

namespace dimask::eval {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// IoU of every detection of an image against every ground-truth instance.
std::vector<double> iou_table(const std::vector<Detection>& dets, const std::vector<synth::InstanceGT>& gt,
                              IouKind kind) {
  std::vector<double> t(dets.size() * gt.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (dets[d].class_id != gt[g].class_id) continue;
      t[d * gt.size() + g] =
          kind == IouKind::kBox ? box_iou(dets[d].box, gt[g].box) : mask_iou(dets[d].mask, gt[g].mask);
    }
  }
  return t;
}

double interpolated_area(const std::vector<bool>& hits, std::size_t positives) {
  const std::size_t n = hits.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += hits[i];
    recall[i] = static_cast<double>(tp) / static_cast<double>(positives);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double area = 0, prev = 0;
  for (std::size_t i = 0; i < n; ++i) {
    area += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return area;
}

[[noreturn]] void bad_line(std::size_t line, const std::string& what) {
  throw ParseError("prediction dump line " + std::to_string(line) + ": " + what, line);
}

}  // namespace

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(static_cast<double>(50 + 5 * i) / 100.0);
  return t;
}

std::optional<double> average_precision(std::span<const std::vector<Detection>> dets,
                                        std::span<const std::vector<synth::InstanceGT>> gts, IouKind kind,
                                        const std::vector<double>& thresholds) {
  if (dets.size() != gts.size()) throw DimensionError("average_precision: detections and ground truth differ in image count");
  if (thresholds.empty()) throw ConfigError("average_precision needs at least one IoU threshold");
  std::map<int, std::size_t> positives;
  for (const auto& g : gts)
    for (const auto& inst : g) ++positives[inst.class_id];
  if (positives.empty()) return std::nullopt;

  std::vector<std::vector<double>> ious;
  for (std::size_t i = 0; i < dets.size(); ++i) ious.push_back(iou_table(dets[i], gts[i], kind));

  struct Ranked {
    double score;
    std::size_t image, det;
  };
  double total = 0;
  for (const auto& [cls, npos] : positives) {
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (std::size_t d = 0; d < dets[i].size(); ++d)
        if (dets[i][d].class_id == cls) ranked.push_back({dets[i][d].score, i, d});
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

    for (double thr : thresholds) {
      std::vector<std::vector<bool>> taken(gts.size());
      for (std::size_t i = 0; i < gts.size(); ++i) taken[i].assign(gts[i].size(), false);
      std::vector<bool> hits;
      hits.reserve(ranked.size());
      for (const auto& r : ranked) {
        const auto& gt = gts[r.image];
        double best = -1;
        std::size_t pick = gt.size();
        for (std::size_t g = 0; g < gt.size(); ++g) {
          if (gt[g].class_id != cls || taken[r.image][g]) continue;
          const double iou = ious[r.image][r.det * gt.size() + g];
          if (iou >= thr && iou > best) {
            best = iou;
            pick = g;
          }
        }
        if (pick < gt.size()) taken[r.image][pick] = true;
        hits.push_back(pick < gt.size());
      }
      total += interpolated_area(hits, npos);
    }
  }
  return total / static_cast<double>(positives.size() * thresholds.size());
}

std::vector<QueryRecord> query_records(const model::PredictionSet& pred, std::uint64_t image, std::size_t layer,
                                       std::size_t image_h, std::size_t image_w) {
  const std::size_t k = pred.class_logits.dim(0), classes = pred.class_logits.dim(1);
  if (pred.mask_h == 0 || image_h % pred.mask_h != 0 || image_w % pred.mask_w != 0 ||
      image_h / pred.mask_h != image_w / pred.mask_w) {
    throw DimensionError("prediction masks of " + std::to_string(pred.mask_h) + "x" + std::to_string(pred.mask_w) +
                         " do not tile a " + std::to_string(image_h) + "x" + std::to_string(image_w) + " image");
  }
  const std::size_t factor = image_h / pred.mask_h;
  const Tensor low = transpose(pred.mask_logits.detach());
  const Tensor full = factor == 1 ? low : upsample_bilinear(low, pred.mask_h, pred.mask_w, factor);
  const auto logits = pred.class_logits.data();
  const auto boxes = pred.boxes.data();
  const auto masks = full.data();
  std::vector<QueryRecord> out(k);
  for (std::size_t q = 0; q < k; ++q) {
    auto& r = out[q];
    r.image = image;
    r.layer = layer;
    r.query = q;
    for (std::size_t c = 0; c < classes; ++c) r.probs.push_back(sigmoid(logits[q * classes + c]));
    r.box = {boxes[q * 4], boxes[q * 4 + 1], boxes[q * 4 + 2], boxes[q * 4 + 3]};
    r.height = image_h;
    r.width = image_w;
    r.mask.resize(image_h * image_w);
    for (std::size_t p = 0; p < r.mask.size(); ++p) r.mask[p] = masks[p * k + q] > 0.0 ? 1 : 0;
  }
  return out;
}

std::vector<Detection> detections(std::span<const QueryRecord> records, std::size_t max_detections) {
  struct Pair {
    double score;
    std::size_t record;
    int cls;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t c = 0; c < records[i].probs.size(); ++c)
      pairs.push_back({records[i].probs[c], i, static_cast<int>(c)});
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.score > b.score; });
  if (pairs.size() > max_detections) pairs.resize(max_detections);
  std::vector<Detection> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.cls, p.score, records[p.record].box, records[p.record].mask});
  return out;
}

void write_dump(std::ostream& out, std::span<const QueryRecord> records) {
  out << "# image layer query C probs... cx cy w h height width runs...\n";
  out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : records) {
    out << r.image << ' ' << r.layer << ' ' << r.query << ' ' << r.probs.size();
    for (double p : r.probs) out << ' ' << p;
    out << ' ' << r.box.cx << ' ' << r.box.cy << ' ' << r.box.w << ' ' << r.box.h << ' ' << r.height << ' '
        << r.width;
    const auto runs = rle_encode(r.mask);
    out << ' ' << runs.size();
    for (auto v : runs) out << ' ' << v;
    out << '\n';
  }
}

std::vector<QueryRecord> read_dump(std::istream& in) {
  std::vector<QueryRecord> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty() || text[0] == '#') continue;
    std::istringstream ss(text);
    QueryRecord r;
    std::size_t classes = 0, runs = 0;
    if (!(ss >> r.image >> r.layer >> r.query >> classes)) bad_line(line, "expected image, layer, query, class count");
    if (classes == 0 || classes > 1000) bad_line(line, "implausible class count " + std::to_string(classes));
    r.probs.resize(classes);
    for (double& p : r.probs)
      if (!(ss >> p) || !(p >= 0.0 && p <= 1.0)) bad_line(line, "class probabilities must lie in [0,1]");
    if (!(ss >> r.box.cx >> r.box.cy >> r.box.w >> r.box.h)) bad_line(line, "expected four box values");
    if (!(ss >> r.height >> r.width >> runs)) bad_line(line, "expected mask height, width and run count");
    if (r.height * r.width == 0 || runs > r.height * r.width + 1) bad_line(line, "implausible mask header");
    std::vector<std::uint32_t> rle(runs);
    for (auto& v : rle)
      if (!(ss >> v)) bad_line(line, "mask runs end early");
    std::string extra;
    if (ss >> extra) bad_line(line, "trailing field '" + extra + "'");
    try {
      r.mask = rle_decode(rle, r.height * r.width);
    } catch (const std::invalid_argument& e) {
      bad_line(line, e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::optional<double> GapRow::gap() const {
  if (!ap_box || !ap_mask) return std::nullopt;
  return *ap_box - *ap_mask;
}

std::vector<GapRow> gap_report(std::span<const QueryRecord> records, std::span<const synth::Scene> scenes,
                               std::size_t num_layers) {
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < scenes.size(); ++i) index[scenes[i].seed] = i;
  // grouped[layer][image] -> records
  std::vector<std::vector<std::vector<QueryRecord>>> grouped(num_layers,
                                                             std::vector<std::vector<QueryRecord>>(scenes.size()));
  std::set<std::size_t> seen;
  for (const auto& r : records) {
    const auto it = index.find(r.image);
    if (it == index.end()) throw ConfigError("prediction for image " + std::to_string(r.image) + " has no ground truth");
    if (r.layer >= num_layers) {
      throw ConfigError("prediction for layer " + std::to_string(r.layer) + " but the model has " +
                        std::to_string(num_layers) + " decoder layers");
    }
    seen.insert(r.layer);
    grouped[r.layer][it->second].push_back(r);
  }
  std::string missing;
  for (std::size_t l = 0; l < num_layers; ++l)
    if (!seen.count(l)) missing += (missing.empty() ? "" : ", ") + std::to_string(l);
  if (!missing.empty()) throw ConfigError("prediction dump has no records for layer(s) " + missing);

  std::vector<std::vector<synth::InstanceGT>> gts;
  for (const auto& s : scenes) gts.push_back(s.instances);
  std::vector<GapRow> rows;
  for (std::size_t l = 0; l < num_layers; ++l) {
    std::vector<std::vector<Detection>> dets;
    for (const auto& per_image : grouped[l]) dets.push_back(detections(per_image));
    rows.push_back({l, average_precision(dets, gts, IouKind::kBox), average_precision(dets, gts, IouKind::kMask)});
  }
  return rows;
}

std::string gap_csv(std::span<const GapRow> rows) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    std::ostringstream s;
    s.precision(6);
    s << std::fixed << *v;
    return s.str();
  };
  std::string out = "layer,ap_box,ap_mask,gap\n";
  for (const auto& r : rows)
    out += std::to_string(r.layer) + "," + cell(r.ap_box) + "," + cell(r.ap_mask) + "," + cell(r.gap()) + "\n";
  return out;
}

std::vector<GapRow> parse_gap_csv(const std::string& text) {
  const auto table = csv::parse(text);
  if (table.header != std::vector<std::string>{"layer", "ap_box", "ap_mask", "gap"}) {
    throw ParseError("gap csv: unexpected header", 1);
  }
  auto opt = [](const std::string& cell) -> std::optional<double> {
    const double v = csv::number(cell);
    if (std::isnan(v)) return std::nullopt;
    return v;
  };
  std::vector<GapRow> rows;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    try {
      GapRow g;
      g.layer = static_cast<std::size_t>(std::stoul(r[0]));
      g.ap_box = opt(r[1]);
      g.ap_mask = opt(r[2]);
      rows.push_back(g);
    } catch (const std::logic_error& e) {
      throw ParseError(std::string("gap csv row ") + std::to_string(i + 1) + ": " + e.what(), i + 2);
    }
  }
  return rows;
}

}  // namespace dimask::eval
