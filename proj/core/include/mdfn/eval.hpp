#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdfn/boxes.hpp"

namespace mdfn {

struct Detection {
  Box box;
  int class_id = 0;  // never background (0)
  double score = 0.0;
};

// Greedy per-class suppression: keep the highest score, drop everything
// overlapping it above the threshold, repeat.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

struct DetRecord {
  int image_id = 0;
  Box box;
  double score = 0.0;
};

struct GtRecord {
  int image_id = 0;
  Box box;
  bool ignore = false;  // outside the evaluated stratum: matches are dropped, not penalized
};

// Area under the precision-recall curve for one class over a dataset.
// All-point interpolation (precision envelope) by default; the 11-point
// variant is available behind the flag. Detections are ranked by descending
// score; each ground truth matches at most once, best IoU first.
double average_precision(std::vector<DetRecord> dets, const std::vector<GtRecord>& gts,
                         double iou_threshold, bool eleven_point = false);

struct EvalObject {
  Box box;
  int class_id = 0;
  double occluded_fraction = 0.0;
};

struct EvalOptions {
  std::vector<double> iou_thresholds = {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8};
  double nms_threshold = 0.45;
  double score_floor = 0.01;
  int top_k = 200;
  bool eleven_point = false;
  double small_area = 0.05;          // stratum cut: box area below 5% of the image
  double occlusion_threshold = 0.3;  // stratum cut: occluded fraction above 30%
};

struct ApResult {
  std::vector<double> thresholds;
  std::map<int, std::vector<double>> per_class;  // class_id -> AP at each threshold
  std::vector<double> map_per_threshold;

  double map_at(double thr) const;
  nlohmann::json to_json(const std::vector<std::string>& class_names) const;
};

// AP per class per threshold plus mAP, from already-final detections.
ApResult evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                             const std::vector<std::vector<EvalObject>>& gts_per_image,
                             const std::vector<double>& thresholds, int num_classes,
                             bool eleven_point = false);

using Detector = std::function<std::vector<Detection>(int image_index)>;

// Full pipeline over a frozen detector: collect detections, AP sweep, mAP.
ApResult evaluate(const Detector& detector,
                  const std::vector<std::vector<EvalObject>>& gts_per_image,
                  int num_classes, const EvalOptions& opts = {});

// Disjoint strata keyed on annotation metadata: occluded wins over small,
// everything else lands in "rest". Objects outside the active stratum are
// ignore regions.
enum class Stratum { Occluded, Small, Rest };
const char* stratum_name(Stratum s);
Stratum stratum_of(const EvalObject& obj, const EvalOptions& opts);

struct StrataResult {
  std::map<Stratum, int> counts;
  std::map<Stratum, ApResult> results;

  nlohmann::json to_json(const std::vector<std::string>& class_names) const;
};

StrataResult evaluate_strata(const std::vector<std::vector<Detection>>& dets_per_image,
                             const std::vector<std::vector<EvalObject>>& gts_per_image,
                             const std::vector<double>& thresholds, int num_classes,
                             const EvalOptions& opts = {});

// Decode one image's raw predictions: softmax scores, offset decoding
// against the grid, score floor, per-class NMS, global top-k. Batch size of
// every prediction tensor must be 1.
std::vector<Detection> postprocess_predictions(const std::vector<Tensor>& preds,
                                               const DefaultBoxGrid& grid, int num_classes,
                                               const EvalOptions& opts = {});

}  // namespace mdfn
