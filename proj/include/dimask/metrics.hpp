#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dimask/decoder.hpp"
#include "dimask/synth.hpp"

namespace dimask::eval {

struct Detection {
  int class_id = 0;
  double score = 0;
  Box box;
  std::vector<std::uint8_t> mask;  // image resolution, 0/1
};

enum class IouKind { kBox, kMask };

// 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

// Mean over classes present in the ground truth and over thresholds of the
// all-point interpolated precision-recall area. Detections of each class
// are ranked by descending score (stable across images, then list order) and
// each claims the unmatched same-class ground truth of its image with the
// highest IoU >= threshold. nullopt when there is no ground truth at all.
// dets[i] and gts[i] describe the same image.
std::optional<double> average_precision(std::span<const std::vector<Detection>> dets,
                                        std::span<const std::vector<synth::InstanceGT>> gts, IouKind kind,
                                        const std::vector<double>& thresholds = coco_thresholds());

// One query of one decoder layer, as written to a prediction dump. The mask
// is the prediction upsampled to image size and thresholded at 0.5.
struct QueryRecord {
  std::uint64_t image = 0;
  std::size_t layer = 0;
  std::size_t query = 0;
  std::vector<double> probs;
  Box box;
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> mask;

  bool operator==(const QueryRecord&) const = default;
};

std::vector<QueryRecord> query_records(const model::PredictionSet& pred, std::uint64_t image, std::size_t layer,
                                       std::size_t image_h, std::size_t image_w);

// The `max_detections` highest-scoring (query, class) pairs of one image and
// layer, by descending probability.
std::vector<Detection> detections(std::span<const QueryRecord> records, std::size_t max_detections = 100);

// Prediction dump, one line per record:
//   image layer query C p_0 .. p_{C-1} cx cy w h height width n r_1 .. r_n
// where r_i are rle_encode runs of the mask. Lines starting with '#' and
// blank lines are skipped. read_dump throws ParseError carrying the line.
void write_dump(std::ostream& out, std::span<const QueryRecord> records);
std::vector<QueryRecord> read_dump(std::istream& in);

struct GapRow {
  std::size_t layer = 0;
  std::optional<double> ap_box, ap_mask;
  std::optional<double> gap() const;
};

// AP^box and AP^mask of every decoder layer in [0, num_layers). Records
// refer to scenes by seed. Throws ConfigError naming every absent layer, or
// a record whose image is not in `scenes`.
std::vector<GapRow> gap_report(std::span<const QueryRecord> records, std::span<const synth::Scene> scenes,
                               std::size_t num_layers);

// Header `layer,ap_box,ap_mask,gap`; absent values are written as NA.
std::string gap_csv(std::span<const GapRow> rows);
// Inverse of gap_csv up to its 6-decimal rounding. ParseError on bad rows.
std::vector<GapRow> parse_gap_csv(const std::string& text);

}  // namespace dimask::eval
