#include "mdfn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace mdfn {

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (size_t i = 0; i < dets.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (size_t j = i + 1; j < dets.size(); ++j) {
      if (suppressed[j]) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;
}

double average_precision(std::vector<DetRecord> dets, const std::vector<GtRecord>& gts,
                         double iou_threshold, bool eleven_point) {
  int n_pos = 0;
  for (const auto& g : gts)
    if (!g.ignore) ++n_pos;

  std::stable_sort(dets.begin(), dets.end(),
                   [](const DetRecord& a, const DetRecord& b) { return a.score > b.score; });

  std::vector<bool> gt_used(gts.size(), false);
  std::vector<double> tp, fp;
  for (const auto& d : dets) {
    int best_g = -1;
    double best = 0.0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].image_id != d.image_id) continue;
      const double o = iou(d.box, gts[g].box);
      if (o > best) {
        best = o;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= iou_threshold) {
      if (gts[best_g].ignore) continue;  // neither hit nor miss
      if (!gt_used[best_g]) {
        gt_used[best_g] = true;
        tp.push_back(1);
        fp.push_back(0);
      } else {
        tp.push_back(0);
        fp.push_back(1);  // duplicate
      }
    } else {
      tp.push_back(0);
      fp.push_back(1);
    }
  }
  // detections consumed by ignore regions are gone by now; the empty-gt
  // convention applies to what survived
  if (n_pos == 0) return tp.empty() ? 1.0 : 0.0;
  if (tp.empty()) return 0.0;

  std::vector<double> recall(tp.size()), precision(tp.size());
  double ctp = 0, cfp = 0;
  for (size_t i = 0; i < tp.size(); ++i) {
    ctp += tp[i];
    cfp += fp[i];
    recall[i] = ctp / n_pos;
    precision[i] = ctp / (ctp + cfp);
  }

  if (eleven_point) {
    double ap = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double r = t / 10.0;
      double p = 0.0;
      for (size_t i = 0; i < recall.size(); ++i)
        if (recall[i] >= r) p = std::max(p, precision[i]);
      ap += p / 11.0;
    }
    return ap;
  }

  // precision envelope, integrated over recall steps
  for (size_t i = precision.size() - 1; i-- > 0;)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_r = 0.0;
  for (size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

double ApResult::map_at(double thr) const {
  for (size_t i = 0; i < thresholds.size(); ++i)
    if (std::abs(thresholds[i] - thr) < 1e-9) return map_per_threshold[i];
  throw ValueError(msg("ApResult: threshold ", thr, " not evaluated"));
}

namespace {

std::string thr_key(double thr) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << thr;
  return os.str();
}

}  // namespace

nlohmann::json ApResult::to_json(const std::vector<std::string>& class_names) const {
  nlohmann::json j;
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [cid, aps] : per_class) {
    nlohmann::json row = nlohmann::json::object();
    for (size_t i = 0; i < thresholds.size(); ++i) row[thr_key(thresholds[i])] = aps[i];
    const std::string name = cid >= 1 && cid <= static_cast<int>(class_names.size())
                                 ? class_names[cid - 1]
                                 : msg("class_", cid);
    classes[name] = std::move(row);
  }
  j["classes"] = std::move(classes);
  nlohmann::json maps = nlohmann::json::object();
  for (size_t i = 0; i < thresholds.size(); ++i)
    maps[thr_key(thresholds[i])] = map_per_threshold[i];
  j["mAP"] = std::move(maps);
  return j;
}

ApResult evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                             const std::vector<std::vector<EvalObject>>& gts_per_image,
                             const std::vector<double>& thresholds, int num_classes,
                             bool eleven_point) {
  if (dets_per_image.size() != gts_per_image.size())
    throw ShapeError(msg("evaluate_detections: ", dets_per_image.size(), " detection lists vs ",
                         gts_per_image.size(), " gt lists"));
  ApResult out;
  out.thresholds = thresholds;
  out.map_per_threshold.assign(thresholds.size(), 0.0);
  for (int c = 1; c < num_classes; ++c) {
    std::vector<DetRecord> dets;
    std::vector<GtRecord> gts;
    for (size_t img = 0; img < dets_per_image.size(); ++img) {
      for (const auto& d : dets_per_image[img])
        if (d.class_id == c) dets.push_back({static_cast<int>(img), d.box, d.score});
      for (const auto& g : gts_per_image[img])
        if (g.class_id == c) gts.push_back({static_cast<int>(img), g.box, false});
    }
    auto& row = out.per_class[c];
    row.resize(thresholds.size());
    for (size_t t = 0; t < thresholds.size(); ++t) {
      row[t] = average_precision(dets, gts, thresholds[t], eleven_point);
      out.map_per_threshold[t] += row[t];
    }
  }
  const int n_classes_eval = num_classes - 1;
  for (double& v : out.map_per_threshold) v /= std::max(1, n_classes_eval);
  return out;
}

ApResult evaluate(const Detector& detector,
                  const std::vector<std::vector<EvalObject>>& gts_per_image, int num_classes,
                  const EvalOptions& opts) {
  if (gts_per_image.empty()) throw ValueError("evaluate: empty dataset");
  std::vector<std::vector<Detection>> dets(gts_per_image.size());
  for (size_t i = 0; i < gts_per_image.size(); ++i) dets[i] = detector(static_cast<int>(i));
  return evaluate_detections(dets, gts_per_image, opts.iou_thresholds, num_classes,
                             opts.eleven_point);
}

const char* stratum_name(Stratum s) {
  switch (s) {
    case Stratum::Occluded:
      return "occluded";
    case Stratum::Small:
      return "small";
    case Stratum::Rest:
      return "rest";
  }
  return "?";
}

Stratum stratum_of(const EvalObject& obj, const EvalOptions& opts) {
  if (obj.occluded_fraction > opts.occlusion_threshold) return Stratum::Occluded;
  if (obj.box.area() < opts.small_area) return Stratum::Small;
  return Stratum::Rest;
}

StrataResult evaluate_strata(const std::vector<std::vector<Detection>>& dets_per_image,
                             const std::vector<std::vector<EvalObject>>& gts_per_image,
                             const std::vector<double>& thresholds, int num_classes,
                             const EvalOptions& opts) {
  StrataResult out;
  for (Stratum s : {Stratum::Occluded, Stratum::Small, Stratum::Rest}) {
    out.counts[s] = 0;
    ApResult r;
    r.thresholds = thresholds;
    r.map_per_threshold.assign(thresholds.size(), 0.0);
    for (int c = 1; c < num_classes; ++c) {
      std::vector<DetRecord> dets;
      std::vector<GtRecord> gts;
      for (size_t img = 0; img < gts_per_image.size(); ++img) {
        for (const auto& d : dets_per_image[img])
          if (d.class_id == c) dets.push_back({static_cast<int>(img), d.box, d.score});
        for (const auto& g : gts_per_image[img])
          if (g.class_id == c)
            gts.push_back({static_cast<int>(img), g.box, stratum_of(g, opts) != s});
      }
      auto& row = r.per_class[c];
      row.resize(thresholds.size());
      for (size_t t = 0; t < thresholds.size(); ++t) {
        row[t] = average_precision(dets, gts, thresholds[t], opts.eleven_point);
        r.map_per_threshold[t] += row[t];
      }
    }
    for (double& v : r.map_per_threshold) v /= std::max(1, num_classes - 1);
    out.results[s] = std::move(r);
  }
  for (const auto& gl : gts_per_image)
    for (const auto& g : gl) ++out.counts[stratum_of(g, opts)];
  return out;
}

nlohmann::json StrataResult::to_json(const std::vector<std::string>& class_names) const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [s, r] : results) {
    nlohmann::json row = r.to_json(class_names);
    row["count"] = counts.at(s);
    j[stratum_name(s)] = std::move(row);
  }
  return j;
}

std::vector<Detection> postprocess_predictions(const std::vector<Tensor>& preds,
                                               const DefaultBoxGrid& grid, int num_classes,
                                               const EvalOptions& opts) {
  const int cols = num_classes + 4;
  std::vector<Detection> raw;
  int box_base = 0;
  for (size_t t = 0; t < preds.size(); ++t) {
    const Tensor& p = preds[t];
    if (p.dim(0) != 1)
      throw ShapeError(msg("postprocess_predictions: batch must be 1, got ", p.dim(0)));
    const int m = p.dim(2), n = p.dim(3);
    const int k = grid.boxes_per_cell;
    if (p.dim(1) != k * cols)
      throw ShapeError(msg("postprocess_predictions: tensor ", t, " has ", p.dim(1),
                           " channels, expected ", k * cols));
    if (t >= grid.boxes_per_tap.size() || grid.boxes_per_tap[t] != k * m * n)
      throw ShapeError(msg("postprocess_predictions: tensor ", t, " covers ", k * m * n,
                           " boxes, grid tap has ",
                           t < grid.boxes_per_tap.size() ? grid.boxes_per_tap[t] : -1));
    const auto data = p.data();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        for (int q = 0; q < k; ++q) {
          // softmax over the class block of this location/slot
          double mx = -1e300;
          for (int c = 0; c < num_classes; ++c)
            mx = std::max(mx, data[idx4(k * cols, m, n, 0, q * cols + c, i, j)]);
          double z = 0.0;
          for (int c = 0; c < num_classes; ++c)
            z += std::exp(data[idx4(k * cols, m, n, 0, q * cols + c, i, j)] - mx);
          const int d = box_base + (i * n + j) * k + q;
          std::array<double, 4> off;
          for (int c = 0; c < 4; ++c)
            off[c] = data[idx4(k * cols, m, n, 0, q * cols + num_classes + c, i, j)];
          for (int c = 1; c < num_classes; ++c) {
            const double score =
                std::exp(data[idx4(k * cols, m, n, 0, q * cols + c, i, j)] - mx) / z;
            if (score < opts.score_floor) continue;
            Detection det;
            det.box = decode_offsets(grid.boxes[d], off).clipped_to_unit();
            if (det.box.w <= 0 || det.box.h <= 0) continue;
            det.class_id = c;
            det.score = score;
            raw.push_back(det);
          }
        }
      }
    }
    box_base += grid.boxes_per_tap[t];
  }

  std::vector<Detection> kept;
  for (int c = 1; c < num_classes; ++c) {
    std::vector<Detection> cls;
    for (const auto& d : raw)
      if (d.class_id == c) cls.push_back(d);
    auto survivors = nms(std::move(cls), opts.nms_threshold);
    kept.insert(kept.end(), survivors.begin(), survivors.end());
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(kept.size()) > opts.top_k) kept.resize(opts.top_k);
  return kept;
}

}  // namespace mdfn
